use std::time::{Duration, Instant};

use clap::Args;
use nvfp4_emu::qlinear::{emulated_fp4_matmul, linear_dgrad, linear_forward, linear_wgrad};
use nvfp4_emu::{dequantize_tensor, quantize_tensor, QuantConfig, Rounding, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::{nvfp4_config, CliError, ModeArg};

#[derive(Args)]
pub struct BenchArgs {
    /// Problem size MxNxK: x is [M, K], W is [N, K].
    #[arg(long, default_value = "256x256x256", value_parser = parse_size)]
    size: (usize, usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Adaptive)]
    mode: ModeArg,
    /// Print one JSON object instead of text.
    #[arg(long)]
    json: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize, usize), String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [m, n, k] if m > 0 && n > 0 && k > 0 => Ok((m, n, k)),
        _ => Err(format!("expected MxNxK with positive sizes, got {s:?}")),
    }
}

/// Seed-determined numbers; identical across runs with the same flags.
#[derive(Serialize)]
struct Results {
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
    mode: &'static str,
    /// Emulated matmul against the f64 product of the dequantized operands.
    matmul_oracle_rel_err: f64,
    matmul_oracle_ok: bool,
    matmul_thread_invariant: bool,
    /// Relative Frobenius error of each pass against the unquantized f64 product.
    forward_rel_err: f64,
    dgrad_rel_err: f64,
    wgrad_rel_err: f64,
}

#[derive(Serialize)]
struct Timing {
    threads: usize,
    quantize_fixed6_ms: f64,
    quantize_mode_ms: f64,
    mode_over_fixed6: f64,
    matmul_ms: f64,
    forward_ms: f64,
    dgrad_ms: f64,
    wgrad_ms: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// `A B^T` in f64 for row-major `A: [m, k]`, `B: [n, k]`.
fn matmul_nt_f64(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = a[i * k..(i + 1) * k]
                .iter()
                .zip(&b[j * k..(j + 1) * k])
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum();
        }
    }
    out
}

fn rel_err(got: &Tensor, want: &[f64]) -> f64 {
    let num: f64 = got.data().iter().zip(want).map(|(&g, &w)| (g as f64 - w).powi(2)).sum();
    let den: f64 = want.iter().map(|w| w * w).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn best_of<T>(runs: usize, mut f: impl FnMut() -> T) -> Duration {
    (0..runs).map(|_| timed(&mut f).1).min().unwrap_or_default()
}

fn ms(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let (m, n, k) = args.size;
    let cfg = nvfp4_config(args.mode).with_rounding(Rounding::Stochastic { seed: args.seed });
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x = gaussian(&mut rng, vec![m, k]);
    let w = gaussian(&mut rng, vec![n, k]);
    let dy = gaussian(&mut rng, vec![m, n]);

    // Emulated NN matmul of x [M, K] and W^T [K, N].
    let rne = QuantConfig { rounding: Rounding::NearestEven, ..cfg.clone() };
    let xq = quantize_tensor(&x, &rne)?;
    let wtq = quantize_tensor(&w.transpose()?, &rne)?;
    let (y, matmul_time) = timed(|| emulated_fp4_matmul(&xq, &wtq));
    let y = y?;
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let y1 = one.install(|| emulated_fp4_matmul(&xq, &wtq))?;
    let oracle = matmul_nt_f64(
        dequantize_tensor(&xq)?.data(),
        dequantize_tensor(&wtq)?.transpose()?.data(),
        m,
        n,
        k,
    );
    let matmul_err = rel_err(&y, &oracle);

    let (fwd, forward_time) = timed(|| linear_forward(&x, &w, &cfg));
    let (dgr, dgrad_time) = timed(|| linear_dgrad(&dy, &w, &cfg));
    let (wgr, wgrad_time) = timed(|| linear_wgrad(&dy, &x, &cfg));
    let exact_y = matmul_nt_f64(x.data(), w.data(), m, n, k);
    let exact_dx = matmul_nt_f64(dy.data(), w.transpose()?.data(), m, k, n);
    let exact_dw = matmul_nt_f64(dy.transpose()?.data(), x.transpose()?.data(), n, k, m);

    let results = Results {
        m,
        n,
        k,
        seed: args.seed,
        mode: args.mode.name(),
        matmul_oracle_rel_err: matmul_err,
        matmul_oracle_ok: matmul_err <= 1e-5,
        matmul_thread_invariant: y == y1,
        forward_rel_err: rel_err(&fwd?, &exact_y),
        dgrad_rel_err: rel_err(&dgr?, &exact_dx),
        wgrad_rel_err: rel_err(&wgr?, &exact_dw),
    };

    let fixed6 = nvfp4_config(ModeArg::Six);
    let fixed = best_of(3, || quantize_tensor(&x, &fixed6));
    let chosen = best_of(3, || quantize_tensor(&x, &rne));
    let timing = Timing {
        threads: rayon::current_num_threads(),
        quantize_fixed6_ms: ms(fixed),
        quantize_mode_ms: ms(chosen),
        mode_over_fixed6: (chosen.as_secs_f64() / fixed.as_secs_f64().max(1e-12) * 1e3).round() / 1e3,
        matmul_ms: ms(matmul_time),
        forward_ms: ms(forward_time),
        dgrad_ms: ms(dgrad_time),
        wgrad_ms: ms(wgrad_time),
    };

    if args.json {
        let v = json!({ "schema": 1, "results": results, "timing": timing });
        println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
    } else {
        print_section("results", &results);
        println!();
        print_section("timing", &timing);
    }
    Ok(())
}

fn print_section<T: Serialize>(title: &str, value: &T) {
    println!("[{title}]");
    if let serde_json::Value::Object(map) = json!(value) {
        for (key, v) in map {
            match v {
                serde_json::Value::String(s) => println!("{key:<24} {s}"),
                v => println!("{key:<24} {v}"),
            }
        }
    }
}
