//! Pair construction for contrastive Siamese training.
//!
//! Similar pairs (label 1) draw two positive scans; dissimilar pairs
//! (label 0) draw one positive and one negative in either order.
//! Negative-negative pairs are never emitted.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::types::{ImageRecord, PairSample};
use crate::error::{Error, Result};

/// Draw `n_pairs` seeded-random pair samples, balanced 50/50 up to rounding.
pub fn make_pairs(
    records: &[ImageRecord],
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    let positives: Vec<&ImageRecord> = records.iter().filter(|r| r.is_positive).collect();
    let negatives: Vec<&ImageRecord> = records.iter().filter(|r| !r.is_positive).collect();
    if positives.is_empty() {
        return Err(Error::data("pair construction needs at least one positive scan"));
    }
    if negatives.is_empty() {
        return Err(Error::data("pair construction needs at least one negative scan"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_similar = n_pairs / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        if i < n_similar {
            let a = positives.choose(&mut rng).unwrap();
            let b = positives.choose(&mut rng).unwrap();
            pairs.push(PairSample {
                image_a: a.image_id.clone(),
                image_b: b.image_id.clone(),
                label: 1,
            });
        } else {
            let p = positives.choose(&mut rng).unwrap();
            let n = negatives.choose(&mut rng).unwrap();
            // either order, per the class-0 definition
            let (a, b) = if rng.gen_bool(0.5) { (p, n) } else { (n, p) };
            pairs.push(PairSample {
                image_a: a.image_id.clone(),
                image_b: b.image_id.clone(),
                label: 0,
            });
        }
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// Write a pair manifest as `image_a,image_b,label` CSV.
pub fn write_pair_manifest<W: Write>(writer: W, pairs: &[PairSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_a", "image_b", "label"])?;
    for p in pairs {
        w.write_record([p.image_a.as_str(), p.image_b.as_str(), &p.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<pairs.csv>", e))?;
    Ok(())
}

pub fn read_pair_manifest<R: Read>(reader: R) -> Result<Vec<PairSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        let label: u8 = rec[2].trim().parse().map_err(|_| Error::Parse {
            line: idx + 1,
            msg: format!("invalid pair label {:?}", &rec[2]),
        })?;
        if label > 1 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: format!("pair label must be 0 or 1, got {label}"),
            });
        }
        out.push(PairSample {
            image_a: rec[0].trim().to_string(),
            image_b: rec[1].trim().to_string(),
            label,
        });
    }
    Ok(out)
}
