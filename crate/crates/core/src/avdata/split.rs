use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub trait SpeakerId {
    fn speaker(&self) -> &str;
}

/// Speaker counts per split by largest remainder, with at least one speaker in
/// every split whose ratio is positive.
fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < needed {
        return Err(Error::Config(format!("{n} speakers cannot fill {needed} non-empty splits")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// Partitions items into (train, val, test) so that every speaker lands in
/// exactly one split. Item order within each split follows the input order.
pub fn split_speakers<T: SpeakerId>(items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let speakers: BTreeSet<&str> = items.iter().map(|s| s.speaker()).collect();
    if speakers.len() < 3 {
        return Err(Error::Config(format!("need at least 3 speakers, got {}", speakers.len())));
    }
    let mut speakers: Vec<String> = speakers.into_iter().map(str::to_owned).collect();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = split_counts(speakers.len(), ratios)?;
    let assignment: HashMap<String, usize> = speakers
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s, if i < counts[0] { 0 } else if i < counts[0] + counts[1] { 1 } else { 2 }))
        .collect();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for item in items {
        match assignment[item.speaker()] {
            0 => train.push(item),
            1 => val.push(item),
            _ => test.push(item),
        }
    }
    Ok((train, val, test))
}
