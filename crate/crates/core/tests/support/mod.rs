//! Straight-from-definition metric oracles, written independently of the library.

#![allow(dead_code)]

use std::collections::HashSet;

/// Levels of the ranked items, best first; `None` when nothing is relevant.
pub fn ap_oracle(levels: &[u8], scale: usize) -> Option<f64> {
    let relevant: Vec<usize> = (0..levels.len())
        .filter(|&i| levels[i] as usize <= scale)
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in &relevant {
        let in_prefix = relevant.iter().filter(|&&q| q <= p).count();
        total += in_prefix as f64 / (p + 1) as f64;
    }
    Some(total / relevant.len() as f64)
}

pub fn recall_oracle(levels: &[u8], scale: usize, k: usize) -> Option<f64> {
    let mut any = false;
    let mut hit = false;
    for (i, &l) in levels.iter().enumerate() {
        if l as usize <= scale {
            any = true;
            if i < k.max(1) {
                hit = true;
            }
        }
    }
    any.then_some(if hit { 1.0 } else { 0.0 })
}

pub fn hap_oracle(levels: &[u8], gains: &[f64]) -> Option<f64> {
    let rel: Vec<f64> = levels.iter().map(|&l| gains[l as usize]).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..rel.len() {
        if rel[k] <= 0.0 {
            continue;
        }
        let mut h_rank = rel[k];
        for j in 0..k {
            h_rank += if rel[j] < rel[k] { rel[j] } else { rel[k] };
        }
        num += h_rank / (k + 1) as f64;
        den += rel[k];
    }
    (den > 0.0).then(|| num / den)
}

/// Tie-aware average set intersection with explicit index sets.
pub fn asi_oracle(levels: &[u8], gains: &[f64]) -> Option<f64> {
    let m = levels.iter().filter(|&&l| gains[l as usize] > 0.0).count();
    if m == 0 {
        return None;
    }
    let mut ideal: Vec<usize> = (0..levels.len()).collect();
    ideal.sort_by_key(|&i| (levels[i], i));
    let mut sum = 0.0;
    for i in 1..=m {
        let predicted: HashSet<usize> = (0..i).collect();
        let boundary = levels[ideal[i - 1]];
        let fully_inside: HashSet<usize> = (0..levels.len())
            .filter(|&x| levels[x] < boundary)
            .collect();
        let slots_left = i - fully_inside.len();
        let exact = predicted.intersection(&fully_inside).count();
        let at_boundary = predicted.iter().filter(|&&x| levels[x] == boundary).count();
        sum += (exact + at_boundary.min(slots_left)) as f64 / i as f64;
    }
    Some(sum / m as f64)
}

pub fn ndcg_oracle(levels: &[u8], num_scales: usize) -> Option<f64> {
    let g: Vec<i32> = levels
        .iter()
        .map(|&l| num_scales as i32 - l.min(num_scales as u8) as i32)
        .collect();
    let dcg = |gs: &[i32]| -> f64 {
        gs.iter()
            .enumerate()
            .map(|(i, &x)| (2f64.powi(x) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut ideal = g.clone();
    ideal.sort_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal);
    (idcg > 0.0).then(|| dcg(&g) / idcg)
}

/// Linear gains `(L - l) / L` for levels `0..=L`.
pub fn linear_gains(num_scales: usize) -> Vec<f64> {
    (0..=num_scales)
        .map(|l| (num_scales - l) as f64 / num_scales as f64)
        .collect()
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}
