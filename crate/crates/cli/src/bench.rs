//! Kernel benchmarks with mandatory equivalence gates: every fast variant
//! must match its naive oracle before any timing is reported.

use crate::config::{BenchConfig, SeedTree};
use anyhow::{bail, Result};
use ferrograd_core::Tensor;
use ferrograd_nn::attention::{chunked_attention, naive_attention};
use ferrograd_nn::recurrent::{parallel_scan, sequential_scan, ScanElement, Transition};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub kind: String,
    pub size: usize,
    pub naive_ms: f64,
    pub fast_ms: f64,
    pub max_deviation: f64,
}

pub const BENCH_HEADER: &str = "kind,size,naive_ms,fast_ms,max_deviation,threads";

/// The harness runs single-threaded; the thread count is reported so the
/// timing context is explicit.
pub const BENCH_THREADS: usize = 1;

fn time_ms(mut f: impl FnMut()) -> f64 {
    // One warm-up pass, then the median of three.
    f();
    let mut samples = Vec::with_capacity(3);
    for _ in 0..3 {
        let start = Instant::now();
        f();
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(f64::total_cmp);
    samples[1]
}

pub fn bench_attention(cfg: &BenchConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let seeds = SeedTree::new(seed);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let mut rng = seeds.rng(&format!("attention{n}"));
        let q = Tensor::rand_uniform(&[cfg.key_width], -1.0, 1.0, &mut rng);
        let keys = Tensor::rand_uniform(&[n, cfg.key_width], -1.0, 1.0, &mut rng);
        let values = Tensor::rand_uniform(&[n, cfg.key_width], -1.0, 1.0, &mut rng);
        let chunk = cfg.chunk.max(1).min(n);
        let mut chunks: Vec<usize> = vec![chunk; n / chunk];
        if n % chunk != 0 {
            chunks.push(n % chunk);
        }
        let naive = naive_attention(&q, &keys, &values)?;
        let chunked = chunked_attention(&q, &keys, &values, &chunks)?;
        let max_deviation = naive
            .data()
            .iter()
            .zip(chunked.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if max_deviation > 1e-9 {
            bail!("attention equivalence failed at n = {n}: deviation {max_deviation:.3e}");
        }
        let naive_ms = time_ms(|| {
            let _ = naive_attention(&q, &keys, &values).unwrap();
        });
        let fast_ms = time_ms(|| {
            let _ = chunked_attention(&q, &keys, &values, &chunks).unwrap();
        });
        rows.push(BenchRow {
            kind: "attention".into(),
            size: n,
            naive_ms,
            fast_ms,
            max_deviation,
        });
    }
    Ok(rows)
}

pub fn bench_scan(cfg: &BenchConfig, seed: u64) -> Result<Vec<BenchRow>> {
    let seeds = SeedTree::new(seed);
    let mut rows = Vec::new();
    for &t in &cfg.sizes {
        let mut rng = seeds.rng(&format!("scan{t}"));
        let elems: Vec<ScanElement> = (0..t)
            .map(|_| {
                ScanElement::new(
                    Transition::Diag(Tensor::rand_uniform(
                        &[cfg.state_width],
                        -0.95,
                        0.95,
                        &mut rng,
                    )),
                    Tensor::rand_uniform(&[cfg.state_width], -1.0, 1.0, &mut rng),
                )
            })
            .collect();
        let sequential = sequential_scan(&elems);
        let parallel = parallel_scan(&elems);
        let max_deviation = sequential
            .iter()
            .zip(&parallel)
            .flat_map(|(s, p)| {
                s.v.data()
                    .iter()
                    .zip(p.v.data())
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0f64, f64::max);
        if max_deviation > 1e-9 {
            bail!("scan equivalence failed at t = {t}: deviation {max_deviation:.3e}");
        }
        let naive_ms = time_ms(|| {
            let _ = sequential_scan(&elems);
        });
        let fast_ms = time_ms(|| {
            let _ = parallel_scan(&elems);
        });
        rows.push(BenchRow {
            kind: "scan".into(),
            size: t,
            naive_ms,
            fast_ms,
            max_deviation,
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.kind, row.size, row.naive_ms, row.fast_ms, row.max_deviation, BENCH_THREADS
        ));
    }
    csv
}
