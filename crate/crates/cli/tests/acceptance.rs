//! Acceptance suite: one line per criterion, run serially so that the time
//! budgets measure each criterion alone.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use conceptsim::actio::{load_npz, read_npy, write_npy, LinearHead};
use conceptsim::attribute::{
    analytic_cig_linear, concept_integrated_gradients, concept_logits, row_attributions, Aggregation,
    AttributionTarget, CigOptions,
};
use conceptsim::factorize::{nnls, nnmf, FactorizeOptions};
use conceptsim::regress::{lambda_max, lasso_cd, LassoOptions};
use conceptsim::replace::{replacement_test, softmax, ReplacementInput, ReplacementOptions};
use conceptsim::similarity::{correlation_matrix, mcs, mmcs, CorrelationKind, McsAxis};
use conceptsim::regress::Direction;
use conceptsim_cli::config::{BundlePaths, SynthKind};
use conceptsim_cli::pipeline::{self, ClassResult, Workspace};
use conceptsim_cli::PipelineConfig;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>())
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    // Box–Muller keeps the suite free of extra distribution crates.
    Array2::from_shape_fn((rows, cols), |_| {
        let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

fn config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        out: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

/// synth → extract → compare with the given configuration.
fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<ClassResult>, String> {
    pipeline::synth(cfg).map_err(|e| e.to_string())?;
    let ws = Workspace::open(cfg, "compare").map_err(|e| e.to_string())?;
    pipeline::extract(&ws).map_err(|e| e.to_string())?;
    pipeline::compare(&ws).map_err(|e| e.to_string())
}

fn npy_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let specials = [0.0, -0.0, f64::INFINITY, f64::NEG_INFINITY, f64::MIN_POSITIVE / 2.0, f64::MAX, f64::EPSILON];
    for i in 0..100 {
        let (r, c) = (rng.gen_range(0..40), rng.gen_range(0..40));
        let mut m = Array2::from_shape_fn((r, c), |_| f64::from_bits(rng.gen::<u64>()));
        if r * c > 0 {
            m[[0, 0]] = specials[i % specials.len()];
        }
        let back = read_npy(&write_npy(&m)).map_err(|e| e.to_string())?;
        ensure(back.dim() == m.dim(), || format!("matrix {i}: shape {:?} became {:?}", m.dim(), back.dim()))?;
        let same = m.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("matrix {i}: bits differ"))?;
    }
    Ok("100 matrices bit-identical (random bit patterns incl. NaN payloads)".into())
}

fn nnmf_planted() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let a = uniform(60, 5, &mut rng).dot(&uniform(5, 40, &mut rng));
        let opts = FactorizeOptions {
            max_iter: 500,
            tol: 0.0,
            seed: i,
        };
        let dec = nnmf(a.view(), 5, &opts).map_err(|e| e.to_string())?;
        let rel = dec.relative_error(a.view());
        worst = worst.max(rel);
        ensure(rel <= 1e-2, || format!("instance {i}: relative error {rel:.3e}"))?;
        ensure(dec.iterations <= 500, || format!("instance {i}: {} iterations", dec.iterations))?;
        for (t, pair) in dec.objective_trace.windows(2).enumerate() {
            // Equal objectives may differ in the last bits between iterations.
            ensure(pair[1] <= pair[0] * (1.0 + 1e-12), || {
                format!("instance {i}: objective rose at iteration {t}: {pair:?}")
            })?;
        }
    }
    Ok(format!("20 instances, worst relative error {worst:.2e}, objective monotone"))
}

/// Accelerated projected gradient on `½uᵀGu − bᵀu` over `u ≥ 0`.
fn projected_gradient(g: ArrayView2<f64>, b: ArrayView1<f64>, iters: usize) -> Array1<f64> {
    // Lipschitz constant by power iteration.
    let mut v = Array1::from_elem(b.len(), 1.0);
    let mut lip = 0.0;
    for _ in 0..200 {
        let gv = g.dot(&v);
        lip = gv.dot(&gv).sqrt() / v.dot(&v).sqrt();
        v = &gv / gv.dot(&gv).sqrt();
    }
    let step = 1.0 / (lip * 1.01);
    let mut u = Array1::<f64>::zeros(b.len());
    let mut y = u.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = g.dot(&y) - b;
        let next = (&y - &(grad * step)).mapv(|x| x.max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + &((&next - &u) * ((t - 1.0) / t_next));
        u = next;
        t = t_next;
    }
    u
}

fn quadratic(g: ArrayView2<f64>, b: ArrayView1<f64>, u: ArrayView1<f64>) -> f64 {
    0.5 * u.dot(&g.dot(&u)) - b.dot(&u)
}

fn nnls_kkt_and_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 10;
    let w = uniform(k, 30, &mut rng);
    let gram = w.dot(&w.t());
    let rows = normal(1000, 30, &mut rng) + 0.3;
    let (mut worst_kkt, mut worst_gap) = (0.0f64, 0.0f64);
    for (i, a) in rows.rows().into_iter().enumerate() {
        let b = w.dot(&a);
        let u = nnls(gram.view(), b.view());
        let grad = gram.dot(&u) - &b;
        for j in 0..k {
            let r = if u[j] > 0.0 { grad[j].abs() } else { (-grad[j]).max(0.0) };
            worst_kkt = worst_kkt.max(r).max(-u[j]);
        }
        if i % 10 == 0 {
            let oracle = projected_gradient(gram.view(), b.view(), 3000);
            let gap = (quadratic(gram.view(), b.view(), u.view()) - quadratic(gram.view(), b.view(), oracle.view())).abs();
            worst_gap = worst_gap.max(gap);
        }
    }
    ensure(worst_kkt <= 1e-8, || format!("KKT residual {worst_kkt:.2e}"))?;
    ensure(worst_gap <= 1e-10, || format!("objective gap to oracle {worst_gap:.2e}"))?;
    Ok(format!("1000 rows: max KKT residual {worst_kkt:.1e}; 100 rows vs oracle: max gap {worst_gap:.1e}"))
}

/// Solves `M x = r` by Gaussian elimination with partial pivoting.
fn solve(mut m: Array2<f64>, mut r: Array1<f64>) -> Array1<f64> {
    let n = r.len();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&a, &b| m[[a, col]].abs().partial_cmp(&m[[b, col]].abs()).unwrap())
            .unwrap();
        for j in 0..n {
            m.swap([col, j], [p, j]);
        }
        r.swap(col, p);
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            for j in col..n {
                m[[row, j]] -= f * m[[col, j]];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| m[[row, j]] * x[j]).sum();
        x[row] = (r[row] - s) / m[[row, row]];
    }
    x
}

fn lasso_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = LassoOptions {
        max_iter: 100_000,
        tol: 1e-10,
    };
    let (mut ls_err, mut sub_err) = (0.0f64, 0.0f64);
    let mut counts_total = [0usize; 3];
    for i in 0..50 {
        let (n, d) = (80, 12);
        let x = normal(n, d, &mut rng);
        let truth = Array1::from_shape_fn(d, |j| if j % 3 == 0 { rng.gen_range(-2.0..2.0) } else { 0.0 });
        let y = x.dot(&truth) + normal(n, 1, &mut rng).column(0).mapv(|v| 0.3 * v);

        let ls = solve(x.t().dot(&x), x.t().dot(&y));
        let fit0 = lasso_cd(x.view(), y.view(), 0.0, &opts).map_err(|e| e.to_string())?;
        ls_err = ls_err.max((&fit0.weights - &ls).iter().fold(0.0, |m, v| m.max(v.abs())));

        let lmax = lambda_max(x.view(), y.view());
        for scale in [1.0, 1.5] {
            let fit = lasso_cd(x.view(), y.view(), lmax * scale, &opts).map_err(|e| e.to_string())?;
            ensure(fit.weights.iter().all(|&v| v == 0.0), || {
                format!("instance {i}: λ = {scale}·λ_max gave nonzero weights")
            })?;
        }

        let mut counts = [0usize; 3];
        for (li, lambda) in [0.01, 0.1, 0.5].into_iter().enumerate() {
            let fit = lasso_cd(x.view(), y.view(), lambda, &opts).map_err(|e| e.to_string())?;
            let corr = x.t().dot(&(&y - &x.dot(&fit.weights))) * (2.0 / n as f64);
            for j in 0..d {
                let wj = fit.weights[j];
                let r = if wj != 0.0 {
                    (corr[j] - lambda * wj.signum()).abs()
                } else {
                    (corr[j].abs() - lambda).max(0.0)
                };
                sub_err = sub_err.max(r);
            }
            counts[li] = fit.weights.iter().filter(|&&v| v != 0.0).count();
            counts_total[li] += counts[li];
        }
        ensure(counts[0] >= counts[1] && counts[1] >= counts[2], || {
            format!("instance {i}: nonzero counts {counts:?} across λ = 0.01, 0.1, 0.5")
        })?;
    }
    ensure(ls_err <= 1e-6, || format!("λ = 0 differs from normal equations by {ls_err:.2e}"))?;
    ensure(sub_err <= 1e-6, || format!("subgradient violation {sub_err:.2e}"))?;
    Ok(format!(
        "50 instances: |w(0) − w_ls| ≤ {ls_err:.1e}, subgradient ≤ {sub_err:.1e}, nonzeros {counts_total:?}"
    ))
}

fn random_head(d: usize, c: usize, rng: &mut ChaCha8Rng) -> LinearHead {
    let labels = (0..c).map(|i| format!("c{i}")).collect();
    LinearHead::new(normal(d, c, rng) * 0.5, normal(1, c, rng).row(0).to_owned(), labels).unwrap()
}

fn cig_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, k, d, c) = (40, 6, 20, 5);
    let u = uniform(n, k, &mut rng);
    let basis = uniform(k, d, &mut rng) * 0.3;
    let head = random_head(d, c, &mut rng);
    let target = 2;

    let logit_opts = CigOptions {
        steps: 30,
        target: AttributionTarget::Logit,
        aggregation: Aggregation::Mean,
    };
    let numeric = concept_integrated_gradients(u.view(), basis.view(), &head, target, &logit_opts).map_err(|e| e.to_string())?;
    let analytic = analytic_cig_linear(u.view(), basis.view(), &head, target).map_err(|e| e.to_string())?;
    let lin_err = (&numeric - &analytic).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(lin_err <= 1e-12, || format!("pre-softmax attribution differs from the analytic value by {lin_err:.2e}"))?;

    let prob = |steps| CigOptions {
        steps,
        target: AttributionTarget::Probability,
        aggregation: Aggregation::Mean,
    };
    let phi = row_attributions(u.view(), basis.view(), &head, target, &prob(300)).map_err(|e| e.to_string())?;
    let p0 = softmax(head.bias.view())[target];
    let mut completeness = 0.0f64;
    for (r, row) in u.rows().into_iter().enumerate() {
        let z = concept_logits(row, basis.view(), &head).map_err(|e| e.to_string())?;
        let gap = (phi.row(r).sum() - (softmax(z.view())[target] - p0)).abs();
        completeness = completeness.max(gap);
    }
    ensure(completeness <= 1e-6, || format!("completeness gap {completeness:.2e} at 300 steps"))?;

    let coarse = concept_integrated_gradients(u.view(), basis.view(), &head, target, &prob(30)).map_err(|e| e.to_string())?;
    let fine = concept_integrated_gradients(u.view(), basis.view(), &head, target, &prob(3000)).map_err(|e| e.to_string())?;
    let drift = (&coarse - &fine).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(drift <= 1e-3, || format!("30 vs 3000 steps drift {drift:.2e}"))?;
    Ok(format!("linear gap {lin_err:.1e}, completeness {completeness:.1e}, 30/3000-step drift {drift:.1e}"))
}

fn replacement_identity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = config(dir.path());
    cfg.importance_repeats = 0;
    // A smaller bundle keeps the budget about the replacement test itself.
    cfg.synth.spec.n_images = 40;
    cfg.model2 = Some(BundlePaths::synthetic(&cfg.out, 2));
    pipeline::synth(&cfg).map_err(|e| e.to_string())?;
    // Compare model 2 with itself.
    cfg.model1 = cfg.model2.clone();
    let ws = Workspace::open(&cfg, "compare").map_err(|e| e.to_string())?;
    pipeline::extract(&ws).map_err(|e| e.to_string())?;
    let results = pipeline::compare(&ws).map_err(|e| e.to_string())?;
    let outcomes = &results[0].outcomes;
    ensure(outcomes.len() == 2 * cfg.k, || format!("{} outcomes", outcomes.len()))?;
    for o in outcomes {
        ensure(o.delta_l2 == 0.0 && o.delta_kl == 0.0 && o.match_accuracy == 1.0, || format!("{o:?}"))?;
    }

    // Rank-1 shortcut against full reconstructions.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, k, d) = (50, 5, 16);
    let u_true = uniform(n, k, &mut rng);
    let u_self = &u_true + &(normal(n, k, &mut rng) * 0.1);
    let u_cross = &u_true + &(normal(n, k, &mut rng) * 0.3);
    let basis = uniform(k, d, &mut rng);
    let head = random_head(d, 4, &mut rng);
    let input = ReplacementInput {
        class_id: "c",
        direction: Direction::OneToTwo,
        u_true: u_true.view(),
        u_self_pred: u_self.view(),
        u_cross_pred: u_cross.view(),
        basis: basis.view(),
        head: &head,
        delta_pearson: None,
    };
    let fast = replacement_test(&input, &ReplacementOptions::default()).map_err(|e| e.to_string())?;
    let (mut worst, mut worst_kl) = (0.0f64, 0.0f64);
    for (i, outcome) in fast.iter().enumerate() {
        let swap = |src: &Array2<f64>| {
            let mut m = u_true.clone();
            m.column_mut(i).assign(&src.column(i));
            m.dot(&basis)
        };
        let (a_self, a_cross) = (swap(&u_self), swap(&u_cross));
        let direct = (&a_cross - &a_self)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .sum::<f64>()
            / n as f64;
        worst = worst.max((direct - outcome.delta_l2).abs());
        let (z_self, z_cross) = (logits(&a_self, &head), logits(&a_cross, &head));
        let kl = z_self
            .rows()
            .into_iter()
            .zip(z_cross.rows())
            .map(|(p, q)| kl_oracle(p, q))
            .sum::<f64>()
            / n as f64;
        worst_kl = worst_kl.max((kl - outcome.delta_kl).abs());
    }
    ensure(worst <= 1e-10, || format!("rank-1 delta_l2 differs from reconstruction by {worst:.2e}"))?;
    ensure(worst_kl <= 1e-10, || format!("rank-1 delta_kl differs from reconstruction by {worst_kl:.2e}"))?;
    Ok(format!(
        "{} self-replacements exact; rank-1 gaps: delta_l2 {worst:.1e}, delta_kl {worst_kl:.1e}",
        outcomes.len()
    ))
}

fn logits(a: &Array2<f64>, head: &LinearHead) -> Array2<f64> {
    a.dot(&head.weights) + &head.bias
}

/// `KL(softmax(p) ‖ softmax(q))` computed in log space.
fn kl_oracle(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let lse = |z: ArrayView1<f64>| {
        let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        m + z.mapv(|v| (v - m).exp()).sum().ln()
    };
    let (lp, lq) = (p.mapv(|v| v - lse(p)), q.mapv(|v| v - lse(q)));
    lp.iter().zip(lq.iter()).map(|(a, b)| a.exp() * (a - b)).sum()
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(f64::MIN_POSITIVE)
}

fn argmax_by<F: Fn(usize) -> f64>(n: usize, f: F) -> usize {
    (0..n).max_by(|&a, &b| f(a).partial_cmp(&f(b)).unwrap()).unwrap()
}

/// Model 2's CMCS and delta_kl per concept, and its concept basis.
type Model2View = (Vec<f64>, Vec<f64>, Array2<f64>);

fn model2_view(result: &ClassResult, out: &Path) -> Result<Model2View, String> {
    let cmcs: Vec<f64> = result
        .records
        .iter()
        .filter(|r| r.direction == Direction::OneToTwo)
        .map(|r| r.cmcs_pearson)
        .collect();
    let kl: Vec<f64> = result
        .outcomes
        .iter()
        .filter(|o| o.direction == Direction::OneToTwo)
        .map(|o| o.delta_kl)
        .collect();
    let ws_layout = pipeline::Layout::new(out);
    let (npz, _) = ws_layout.decomposition(2, &result.layer2, &result.class_id);
    let w = load_npz(&npz).map_err(|e| e.to_string())?.remove("W").ok_or("no W")?;
    Ok((cmcs, kl, w))
}

fn toy_concept() -> Outcome {
    let planted_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let control_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(planted_dir.path());
    let results = run_pipeline(&cfg)?;
    let (cmcs, kl, w) = model2_view(&results[0], planted_dir.path())?;
    let truth: serde_json::Value =
        serde_json::from_slice(&std::fs::read(planted_dir.path().join("synth/truth.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let plant: Array1<f64> = truth["plant_direction"]
        .as_array()
        .ok_or("truth lacks the plant direction")?
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    let planted = argmax_by(w.nrows(), |i| cosine(w.row(i), plant.view()));
    let low: Vec<usize> = (0..cmcs.len()).filter(|&i| cmcs[i] < 0.2).collect();
    ensure(low == vec![planted], || {
        format!("concepts with CMCS < 0.2: {low:?}; planted concept (basis cosine) is {planted}")
    })?;
    let others_min = (0..cmcs.len()).filter(|&i| i != planted).map(|i| cmcs[i]).fold(f64::INFINITY, f64::min);
    ensure(others_min >= 0.8, || format!("lowest non-planted CMCS {others_min:.3}"))?;
    let top_kl = argmax_by(kl.len(), |i| kl[i]);
    ensure(top_kl == planted, || format!("largest delta_kl at concept {top_kl}, planted is {planted}"))?;

    let report = pipeline::report(&cfg).map_err(|e| e.to_string())?;
    let first = report.ranking.first().ok_or("empty report")?;
    ensure(first.direction == Direction::OneToTwo && first.concept_index == planted, || {
        format!("report ranks {} {} first", first.direction, first.concept_index)
    })?;

    let mut control_cfg = config(control_dir.path());
    control_cfg.synth.spec.plant_strength = 0.0;
    let control = run_pipeline(&control_cfg)?;
    let (cmcs0, _, w0) = model2_view(&control[0], control_dir.path())?;
    let mut shift = 0.0f64;
    for i in (0..cmcs.len()).filter(|&i| i != planted) {
        let j = argmax_by(w0.nrows(), |j| cosine(w.row(i), w0.row(j)));
        shift = shift.max((cmcs[i] - cmcs0[j]).abs());
    }
    ensure(shift < 0.1, || format!("non-planted CMCS shifts by up to {shift:.3} against the control"))?;
    Ok(format!(
        "planted concept {planted}: CMCS {:.3}, others ≥ {others_min:.3}, max delta_kl, ranked first; control shift {shift:.3}",
        cmcs[planted]
    ))
}

fn self_comparison() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = config(dir.path());
    cfg.importance_repeats = 0;
    cfg.synth.kind = SynthKind::Linear;
    cfg.synth.spec.n_layers = 2;
    cfg.model1 = Some(BundlePaths::synthetic(&cfg.out, 1));
    pipeline::synth(&cfg).map_err(|e| e.to_string())?;
    cfg.model2 = cfg.model1.clone();
    let ws = Workspace::open(&cfg, "compare").map_err(|e| e.to_string())?;
    pipeline::extract(&ws).map_err(|e| e.to_string())?;
    let results = pipeline::compare(&ws).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for r in &results[0].records {
        ensure(r.cmcs_pearson == r.smcs_pearson && r.cmcs_spearman == r.smcs_spearman, || format!("{r:?}"))?;
        worst = worst.max(r.delta_pearson.abs());
    }
    ensure(worst <= 1e-6, || format!("|ΔPearson| up to {worst:.2e}"))?;
    let layerwise = pipeline::layerwise(&ws).map_err(|e| e.to_string())?;
    for i in 0..layerwise.matrix.values.nrows() {
        let v = layerwise.matrix.values[[i, i]];
        ensure((v - 1.0).abs() <= 1e-12, || format!("layer {i} against itself: MMCS {v}"))?;
    }
    let coefficients = load_npz(&pipeline::Layout::new(dir.path()).compare_class_dir("class0").join("coefficients.npz"))
        .map_err(|e| e.to_string())?;
    let u = &coefficients["u1_shared"];
    let r = correlation_matrix(u.view(), u.view(), CorrelationKind::Pearson).map_err(|e| e.to_string())?;
    let m = mmcs([r.r.view()]).map_err(|e| e.to_string())?;
    ensure(m.value == 1.0, || format!("MMCS of identical coefficient sets is {}", m.value))?;
    Ok(format!("{} concepts: CMCS = SMCS, |ΔPearson| ≤ {worst:.1e}; MMCS = 1", results[0].records.len()))
}

fn lower_bound_trend() -> Outcome {
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = config(dir.path());
        cfg.seed = seed;
        cfg.importance_repeats = 0;
        cfg.synth.kind = SynthKind::Linear;
        cfg.synth.spec.seed = seed;
        cfg.synth.spec.n_images = 50;
        let results = run_pipeline(&cfg)?;
        let res = &results[0];
        let coefficients = load_npz(&pipeline::Layout::new(dir.path()).compare_class_dir(&res.class_id).join("coefficients.npz"))
            .map_err(|e| e.to_string())?;
        // MCS on the same evaluation rows the CMCS values are computed on.
        let r = correlation_matrix(coefficients["u1_eval"].view(), coefficients["u2_eval"].view(), CorrelationKind::Pearson)
            .map_err(|e| e.to_string())?;
        let (mcs1, mcs2) = (mcs(r.r.view(), McsAxis::Rows), mcs(r.r.view(), McsAxis::Columns));
        for rec in &res.records {
            let m = if rec.target_model() == 1 { mcs1[rec.concept_index] } else { mcs2[rec.concept_index] };
            gaps.push(rec.cmcs_pearson - m);
        }
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    ensure(mean >= 0.0, || format!("mean CMCS − MCS = {mean:.4}"))?;
    let positive = gaps.iter().filter(|&&g| g >= 0.0).count();
    Ok(format!("10 pairs, {} concepts: mean CMCS − MCS = {mean:.4} ({positive} non-negative)", gaps.len()))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut trees = Vec::new();
    for jobs in [1, 8] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = config(dir.path());
        cfg.jobs = jobs;
        cfg.synth.spec.n_classes = 3;
        cfg.synth.spec.n_layers = 2;
        cfg.synth.spec.n_images = 40;
        run_pipeline(&cfg)?;
        let ws = Workspace::open(&cfg, "layerwise").map_err(|e| e.to_string())?;
        pipeline::layerwise(&ws).map_err(|e| e.to_string())?;
        pipeline::report(&cfg).map_err(|e| e.to_string())?;
        trees.push(tree(dir.path()));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), || "the runs wrote different file sets".into())?;
    let differing: Vec<&PathBuf> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    ensure(differing.is_empty(), || format!("files differ: {differing:?}"))?;
    let results = a.keys().filter(|k| k.extension().is_some_and(|e| e == "json" || e == "jsonl")).count();
    Ok(format!("{} files ({results} JSON/JSONL) byte-identical at jobs = 1 and 8", a.len()))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "npy round-trip", budget: Duration::from_secs(1), check: npy_round_trip },
        Criterion { name: "nnmf planted rank", budget: Duration::from_secs(10), check: nnmf_planted },
        Criterion { name: "nnls kkt + oracle", budget: Duration::from_secs(5), check: nnls_kkt_and_oracle },
        Criterion { name: "lasso optimality", budget: Duration::from_secs(10), check: lasso_properties },
        Criterion { name: "concept integrated gradients", budget: Duration::from_secs(5), check: cig_checks },
        Criterion { name: "replacement identity", budget: Duration::from_secs(5), check: replacement_identity },
        Criterion { name: "toy planted concept", budget: Duration::from_secs(60), check: toy_concept },
        Criterion { name: "self-comparison", budget: Duration::from_secs(30), check: self_comparison },
        Criterion { name: "lower-bound trend", budget: Duration::from_secs(60), check: lower_bound_trend },
        Criterion { name: "end-to-end determinism", budget: Duration::from_secs(120), check: determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; took {elapsed:.2?} (budget {:?})", c.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<30} {:>9.2?}  {detail}", c.name, elapsed),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<30} {:>9.2?}  {why}", c.name, elapsed);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
