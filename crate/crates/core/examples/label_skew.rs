//! Label-skew partitioning. Uses MNIST from `data/mnist` (or the directory
//! given as the first argument) when the IDX files are present, otherwise a
//! synthetic ten-class label vector.
//!
//!     cargo run --example label_skew [-- path/to/mnist]

use std::collections::BTreeMap;
use std::path::PathBuf;

use onebit_fl::data::{self, DataSource};

fn main() -> onebit_fl::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);
    let source = data::mnist_source(&dir, true);
    let DataSource::Idx { images, .. } = &source else {
        unreachable!()
    };
    let labels: Vec<usize> = if images.exists() {
        let ds = data::load_dataset(&source)?;
        println!("loaded {} MNIST images of dimension {}", ds.len(), ds.dim());
        ds.labels()
    } else {
        println!("no IDX files under {}, using synthetic labels", dir.display());
        (0..6000).map(|i| (i * 37 + i / 7) % 10).collect()
    };

    let clients = 20;
    let shards_per_client = 2;
    let parts = data::partition_by_label(&labels, clients, clients * shards_per_client, shards_per_client, 0)?;
    for (k, idx) in parts.iter().enumerate().take(6) {
        let mut hist = BTreeMap::new();
        for &i in idx {
            *hist.entry(labels[i]).or_insert(0usize) += 1;
        }
        println!("client {k:>2}: {} samples, labels {hist:?}", idx.len());
    }
    println!("...");
    Ok(())
}
