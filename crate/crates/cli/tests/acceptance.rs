//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line
//! with the measured values, then asserts.
//!
//! Criteria 4 and 9 train networks and take the better part of an hour on
//! one core.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array3;
use rayon::prelude::*;

use msno_core::fem::{
    assemble_mass_weighted, assemble_stiffness, relative_errors, solve_fine_diffusion, solve_fine_richards, ErrorNorms, FineSolution, PicardOptions,
};
use msno_core::field::{kle_eigendecomposition, sample_forcing, sample_kle_field, CoefficientField, ForcingField, ForcingKind, ForcingParams, KleDecomposition, KleParams};
use msno_core::gmsfem::{breakeven, solve_gmsfem_diffusion, solve_gmsfem_richards};
use msno_core::msbasis::{assemble_restriction, offline_basis, BasisSet, EigenDiagnostics};
use msno_core::rng::{mix, normals};
use msno_core::subspace::{grassmann_distance, orthonormalize, rbfl2_loss, sal_loss};
use msno_core::{DomainKind, GridPair, NodalField, PatchBox};
use msno_neural::ffno::{tensor_table, Ffno, FfnoConfig, INPUT_CHANNELS};
use msno_neural::predictor::{predict_basis, train_checkpoint, PredictorCheckpoint, TypePlan};
use msno_neural::train::{extract_patches, prepare, train, LossKind, LossSpec, NormStats, PatchSample, TrainOptions};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    // Written to the raw handle so the line shows up without --nocapture.
    let line = format!("criterion {n} ({name}): {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn grid_100() -> GridPair {
    GridPair::new(5, 101).unwrap()
}

fn kle() -> &'static KleDecomposition {
    static D: OnceLock<KleDecomposition> = OnceLock::new();
    D.get_or_init(|| kle_eigendecomposition(&KleParams::default()).unwrap())
}

fn unit_forcing(grid: &GridPair) -> ForcingField {
    sample_forcing(ForcingKind::Unit, 0, grid, &ForcingParams::default()).unwrap()
}

fn l2(reference: &FineSolution, u: &FineSolution, grid: &GridPair) -> f64 {
    relative_errors(reference, u, grid).unwrap().l2
}

fn truncate(sets: &[BasisSet], n_bf: usize) -> Vec<BasisSet> {
    sets.iter().map(|s| BasisSet { vectors: s.vectors[..n_bf].to_vec(), ..s.clone() }).collect()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_oracle_plug_compatibility() {
    let t = Instant::now();
    let grid = grid_100();
    let f = unit_forcing(&grid);
    let picard = PicardOptions::default();
    let oracle = PredictorCheckpoint::oracle(8, LossSpec::new(LossKind::Sal));
    let gaps: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let kappa = sample_kle_field(kle(), mix(0x0c1, i), &grid).unwrap();
            let classical = assemble_restriction(&offline_basis(&grid, &kappa, 8).unwrap().0, &grid).unwrap();
            let learned = assemble_restriction(&predict_basis(&oracle, &kappa, &grid).unwrap(), &grid).unwrap();
            let ud = solve_fine_diffusion(&grid, &kappa, &f).unwrap();
            let ur = solve_fine_richards(&grid, &kappa, &f, &picard).unwrap();
            let d = (l2(&ud, &solve_gmsfem_diffusion(&grid, &kappa, &f, &classical).unwrap().solution, &grid)
                - l2(&ud, &solve_gmsfem_diffusion(&grid, &kappa, &f, &learned).unwrap().solution, &grid))
            .abs();
            let r = (l2(&ur, &solve_gmsfem_richards(&grid, &kappa, &f, &classical, &picard).unwrap().solution, &grid)
                - l2(&ur, &solve_gmsfem_richards(&grid, &kappa, &f, &learned, &picard).unwrap().solution, &grid))
            .abs();
            (d, r)
        })
        .collect();
    let worst_d = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
    let worst_r = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    verdict(
        1,
        "oracle plug-compatibility",
        worst_d <= 1e-10 && worst_r <= 1e-10,
        format!("20 samples, max |L2 gap| diffusion {worst_d:.2e}, richards {worst_r:.2e} (tol 1e-10), {:.0}s", t.elapsed().as_secs_f64()),
    );
}

// ---------------------------------------------------------- 2, 3, 6

struct Run2 {
    diffusion: [Vec<f64>; 2],
    richards: [Vec<f64>; 2],
    eigen: Vec<EigenDiagnostics>,
    seconds: f64,
}

/// 200 fresh samples at 100x100 / 5x5, unit forcing. Index 0 holds
/// N_bf = 8, index 1 N_bf = 4 (the leading four of the same eigenvectors).
fn run2() -> &'static Run2 {
    static R: OnceLock<Run2> = OnceLock::new();
    R.get_or_init(|| {
        let t = Instant::now();
        let grid = grid_100();
        let f = unit_forcing(&grid);
        let picard = PicardOptions::default();
        let norms = ErrorNorms::new(&grid);
        let rows: Vec<([f64; 2], [f64; 2], Vec<EigenDiagnostics>)> = (0..200u64)
            .into_par_iter()
            .map(|i| {
                let kappa = sample_kle_field(kle(), mix(0x5eed_0002, i), &grid).unwrap();
                let ud = solve_fine_diffusion(&grid, &kappa, &f).unwrap();
                let ur = solve_fine_richards(&grid, &kappa, &f, &picard).unwrap();
                let (sets, eigen) = offline_basis(&grid, &kappa, 8).unwrap();
                let mut d = [0.0; 2];
                let mut r = [0.0; 2];
                for (slot, n_bf) in [(0, 8), (1, 4)] {
                    let rm = assemble_restriction(&truncate(&sets, n_bf), &grid).unwrap();
                    let gd = solve_gmsfem_diffusion(&grid, &kappa, &f, &rm).unwrap();
                    let gr = solve_gmsfem_richards(&grid, &kappa, &f, &rm, &picard).unwrap();
                    d[slot] = norms.relative(&ud.values, &gd.solution.values).unwrap().l2;
                    r[slot] = norms.relative(&ur.values, &gr.solution.values).unwrap().l2;
                }
                (d, r, eigen)
            })
            .collect();
        let col = |f: &dyn Fn(&([f64; 2], [f64; 2], Vec<EigenDiagnostics>)) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        Run2 {
            diffusion: [col(&|r| r.0[0]), col(&|r| r.0[1])],
            richards: [col(&|r| r.1[0]), col(&|r| r.1[1])],
            eigen: rows.iter().flat_map(|r| r.2.clone()).collect(),
            seconds: t.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_02_classical_reproduction() {
    let r = run2();
    let (d, rich) = (mean(&r.diffusion[0]), mean(&r.richards[0]));
    let pass = (0.006..=0.020).contains(&d) && (0.012..=0.032).contains(&rich);
    verdict(
        2,
        "classical GMsFEM reproduction",
        pass,
        format!(
            "200 samples, N_bf 8, mean L2 diffusion {:.3}% (band 0.6-2.0%), richards {:.3}% (band 1.2-3.2%), {:.0}s",
            100.0 * d,
            100.0 * rich,
            r.seconds
        ),
    );
}

#[test]
fn criterion_03_enrichment_monotonicity() {
    let r = run2();
    let (d8, d4) = (mean(&r.diffusion[0]), mean(&r.diffusion[1]));
    let (r8, r4) = (mean(&r.richards[0]), mean(&r.richards[1]));
    verdict(
        3,
        "enrichment monotonicity",
        d8 < d4 && r8 < r4,
        format!("mean L2 N_bf 8 vs 4: diffusion {:.3}% < {:.3}%, richards {:.3}% < {:.3}%", 100.0 * d8, 100.0 * d4, 100.0 * r8, 100.0 * r4),
    );
}

#[test]
fn criterion_06_eigen_solver_correctness() {
    let e = &run2().eigen;
    let worst = |f: fn(&EigenDiagnostics) -> f64| e.iter().map(f).fold(0.0, f64::max);
    let (res, null_res, orth, ratio, constant) =
        (worst(|d| d.max_residual), worst(|d| d.null_residual), worst(|d| d.s_orthonormality), worst(|d| d.null_ratio), worst(|d| d.constant_deviation));
    let pass = e.len() == 200 * 36 && res <= 1e-8 && null_res <= 1e-8 && orth <= 1e-8 && ratio <= 1e-9 && constant <= 1e-8;
    verdict(
        6,
        "eigen-solver correctness",
        pass,
        format!(
            "{} eigenproblems, max residual {res:.1e}, null residual {null_res:.1e}, S-orthonormality {orth:.1e}, lambda1/lambda2 {ratio:.1e}, phi1 constant to {constant:.1e}",
            e.len()
        ),
    );
}

// ------------------------------------------------------------ 4, 9

struct Study {
    sal: Vec<f64>,
    rbfl2: Vec<f64>,
    sal_half: Vec<f64>,
    patches: usize,
    epochs: usize,
    seconds: f64,
}

const STUDY_EPOCHS: usize = 150;
const STUDY_HIDDEN: usize = 16;

/// Full-domain predictors trained on 208 patches (13 samples x 16 interior
/// nodes) with SAL and RBFL2, plus SAL on the first 104 patches. Half and
/// Corner domains use the exact eigensolve. Scored on 50 Richards samples.
fn study() -> &'static Study {
    static S: OnceLock<Study> = OnceLock::new();
    S.get_or_init(|| {
        let t = Instant::now();
        let grid = grid_100();
        let n_bf = 8;
        let patches: Vec<PatchSample> = (0..13u64)
            .into_par_iter()
            .map(|i| {
                let kappa = sample_kle_field(kle(), mix(0x5eed_0004, i), &grid).unwrap();
                let (sets, _) = offline_basis(&grid, &kappa, n_bf).unwrap();
                extract_patches(&grid, &kappa, Some(&sets)).unwrap()
            })
            .flatten()
            .filter(|p| p.kind == DomainKind::Full)
            .collect();
        let mut plans = BTreeMap::new();
        plans.insert(DomainKind::Full, TypePlan::Train(FfnoConfig::desk(DomainKind::Full, &grid, n_bf, STUDY_HIDDEN)));
        plans.insert(DomainKind::Half, TypePlan::Oracle);
        plans.insert(DomainKind::Corner, TypePlan::Oracle);
        let opts = TrainOptions { epochs: STUDY_EPOCHS, batch: 8, seed: 7, ..TrainOptions::default() };
        let fit = |kind: LossKind, data: &[PatchSample]| {
            let ck = train_checkpoint(data, &plans, n_bf, &LossSpec::new(kind), &opts).unwrap();
            assert!(ck.manifest.diverged.is_empty(), "{kind:?} training diverged");
            ck
        };
        let half = patches.len() / 2;
        let models = [fit(LossKind::Sal, &patches), fit(LossKind::Rbfl2, &patches), fit(LossKind::Sal, &patches[..half])];

        let f = unit_forcing(&grid);
        let picard = PicardOptions::default();
        let scores: Vec<[f64; 3]> = (0..50u64)
            .into_par_iter()
            .map(|i| {
                let kappa = sample_kle_field(kle(), mix(0x5eed_0044, i), &grid).unwrap();
                let reference = solve_fine_richards(&grid, &kappa, &f, &picard).unwrap();
                models.each_ref().map(|ck| {
                    let r = assemble_restriction(&predict_basis(ck, &kappa, &grid).unwrap(), &grid).unwrap();
                    l2(&reference, &solve_gmsfem_richards(&grid, &kappa, &f, &r, &picard).unwrap().solution, &grid)
                })
            })
            .collect();
        let col = |j: usize| scores.iter().map(|s| s[j]).collect::<Vec<f64>>();
        Study { sal: col(0), rbfl2: col(1), sal_half: col(2), patches: patches.len(), epochs: STUDY_EPOCHS, seconds: t.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_04_loss_ordering() {
    let s = study();
    let (sal, rbfl2) = (mean(&s.sal), mean(&s.rbfl2));
    verdict(
        4,
        "SAL vs RBFL2 loss ordering",
        s.patches >= 200 && s.epochs >= 150 && s.sal.len() >= 50 && sal <= rbfl2,
        format!(
            "{} Full patches, {} epochs, H {STUDY_HIDDEN}, {} Richards samples: mean L2 SAL {:.2}% <= RBFL2 {:.2}%, {:.0}s",
            s.patches,
            s.epochs,
            s.sal.len(),
            100.0 * sal,
            100.0 * rbfl2,
            s.seconds
        ),
    );
}

#[test]
fn criterion_09_data_efficiency() {
    let s = study();
    let (full, half) = (mean(&s.sal), mean(&s.sal_half));
    let degradation = half / full - 1.0;
    verdict(
        9,
        "data-efficiency trend",
        degradation <= 0.25,
        format!(
            "SAL mean L2 with {} patches {:.2}%, with {} patches {:.2}%, relative degradation {:.1}% (limit 25%)",
            s.patches,
            100.0 * full,
            s.patches / 2,
            100.0 * half,
            100.0 * degradation
        ),
    );
}

// ---------------------------------------------------------------- 5

fn random_matrix(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::from_vec(n, k, normals(seed, 77, n * k))
}

/// Orthonormal factor from nalgebra's Householder QR.
fn householder_q(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Squared Grassmann distance from principal angles: `Σ sin² θ_i` with
/// `cos θ_i` the singular values of `Q_aᵀ Q_b`.
fn principal_angle_distance2(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> f64 {
    let s = (qa.transpose() * qb).singular_values();
    s.iter().map(|c| 1.0 - c.min(1.0).powi(2)).sum()
}

#[test]
fn criterion_05_subspace_identities() {
    let t = Instant::now();
    let (mut sal_vs_angles, mut formulas, mut rotation) = (0.0f64, 0.0f64, 0.0f64);
    let mut sign_exact = true;
    for i in 0..1000u64 {
        let n = 12 + (i as usize * 7) % 40;
        let k = 1 + (i as usize) % 8;
        let (a, b) = (random_matrix(n, k, mix(5, 2 * i)), random_matrix(n, k, mix(5, 2 * i + 1)));
        // Every tenth pair shares part of its span so small angles occur too.
        let b = if i % 10 == 0 { &a + &b * 1e-3 } else { b };
        let (qa, qb) = (orthonormalize(&a).unwrap(), orthonormalize(&b).unwrap());
        let sal = sal_loss(&qa, &qb).unwrap();
        let g = grassmann_distance(&qa, &qb).unwrap();
        let oracle = principal_angle_distance2(&householder_q(&a), &householder_q(&b));
        sal_vs_angles = sal_vs_angles.max((sal - oracle).abs()).max((sal - g.distance.powi(2)).abs());
        formulas = formulas.max((g.distance - g.projector_distance).abs());

        // Q_p -> Q_p O and Q_t -> Q_t O' leave the loss unchanged.
        let o1 = householder_q(&random_matrix(k, k, mix(6, i)));
        let o2 = householder_q(&random_matrix(k, k, mix(7, i)));
        let rotated = sal_loss(&orthonormalize(&(&a * o1)).unwrap(), &orthonormalize(&(&b * o2)).unwrap()).unwrap();
        rotation = rotation.max((rotated - sal).abs());

        let signs = normals(mix(8, i), 1, k);
        let flipped = DMatrix::from_fn(n, k, |r, c| if signs[c] < 0.0 { -b[(r, c)] } else { b[(r, c)] });
        sign_exact &= rbfl2_loss(&a, &flipped).unwrap().to_bits() == rbfl2_loss(&a, &b).unwrap().to_bits();
    }
    verdict(
        5,
        "subspace-algebra identities",
        sal_vs_angles <= 1e-8 && formulas <= 1e-8 && rotation <= 1e-10 && sign_exact,
        format!(
            "1000 pairs: |SAL - d^2| {sal_vs_angles:.1e}, |d_angles - d_projector| {formulas:.1e}, rotation {rotation:.1e}, RBFL2 sign invariance {}, {:.1}s",
            if sign_exact { "exact" } else { "broken" },
            t.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 7

/// Per-element oracle: explicit barycentric basis on physical coordinates,
/// gradients from the inverse Jacobian, mass by the edge-midpoint rule.
fn element_oracle(g: &GridPair, k: &NodalField, region: &PatchBox) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = region.len();
    let (mut a, mut m) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
    for iy in region.y0..region.y1 {
        for ix in region.x0..region.x1 {
            for tri in [[(ix, iy), (ix + 1, iy), (ix + 1, iy + 1)], [(ix, iy), (ix + 1, iy + 1), (ix, iy + 1)]] {
                let p = tri.map(|(x, y)| g.node_coord(x, y));
                let jac = nalgebra::Matrix2::new(p[1].0 - p[0].0, p[2].0 - p[0].0, p[1].1 - p[0].1, p[2].1 - p[0].1);
                let inv = jac.try_inverse().unwrap();
                let area = jac.determinant().abs() / 2.0;
                // Reference gradients of (1 - s - t, s, t).
                let reference = [nalgebra::Vector2::new(-1.0, -1.0), nalgebra::Vector2::new(1.0, 0.0), nalgebra::Vector2::new(0.0, 1.0)];
                let grads = reference.map(|r| inv.transpose() * r);
                let shape = |s: f64, t: f64| [1.0 - s - t, s, t];
                let mids = [shape(0.5, 0.0), shape(0.5, 0.5), shape(0.0, 0.5)];
                let kbar = tri.iter().map(|&(x, y)| k.get(x, y)).sum::<f64>() / 3.0;
                let idx = tri.map(|(x, y)| region.local_index(x, y));
                for i in 0..3 {
                    for j in 0..3 {
                        a[(idx[i], idx[j])] += kbar * area * grads[i].dot(&grads[j]);
                        m[(idx[i], idx[j])] += kbar * area * mids.iter().map(|q| q[i] * q[j]).sum::<f64>() / 3.0;
                    }
                }
            }
        }
    }
    (a, m)
}

fn manufactured_l2(n_fine: usize) -> f64 {
    let g = GridPair::new(2, n_fine).unwrap();
    let nodal = |f: &dyn Fn(f64, f64) -> f64| NodalField::from_fn(n_fine, n_fine, |ix, iy| {
        let (x, y) = g.node_coord(ix, iy);
        f(x, y)
    });
    // u = sin(πx) sin(πy), κ = 1 + x + 2y.
    let kappa = CoefficientField::from_values(nodal(&|x, y| 1.0 + x + 2.0 * y)).unwrap();
    let rhs = nodal(&|x, y| {
        let (s, c) = ((PI * x).sin() * (PI * y).sin(), PI * ((PI * x).cos() * (PI * y).sin() + 2.0 * (PI * x).sin() * (PI * y).cos()));
        2.0 * PI * PI * (1.0 + x + 2.0 * y) * s - c
    });
    let u = solve_fine_diffusion(&g, &kappa, &ForcingField { values: rhs, kind: ForcingKind::Unit }).unwrap();
    let exact = FineSolution { values: nodal(&|x, y| (PI * x).sin() * (PI * y).sin()), picard: None };
    l2(&exact, &u, &g)
}

#[test]
fn criterion_07_fem_verification() {
    let (coarse, fine) = (manufactured_l2(33), manufactured_l2(65));
    let rate = (coarse / fine).log2();

    let g = GridPair::new(2, 17).unwrap();
    let values = normals(71, 1, 17 * 17).iter().map(|z| (4.0 * z).exp()).collect();
    let kappa = NodalField::new(17, 17, values).unwrap();
    let mut worst = 0.0f64;
    for region in [g.whole(), PatchBox { x0: 3, x1: 11, y0: 0, y1: 8 }, PatchBox { x0: 8, x1: 16, y0: 4, y1: 12 }] {
        let (ao, mo) = element_oracle(&g, &kappa, &region);
        let a = assemble_stiffness(&g, &kappa, &region).unwrap().to_dense();
        let m = assemble_mass_weighted(&g, &kappa, &region).unwrap().to_dense();
        worst = worst.max((&a - &ao).amax() / ao.amax()).max((&m - &mo).amax() / mo.amax());
    }
    verdict(
        7,
        "FEM verification",
        (1.8..=2.2).contains(&rate) && worst <= 1e-12,
        format!("L2 rate {rate:.3} (errors {coarse:.3e} -> {fine:.3e}, band 1.8-2.2), assembly vs element oracle {worst:.1e} (tol 1e-12)"),
    );
}

// ---------------------------------------------------------------- 8

fn tiny_input(cfg: &FfnoConfig, seed: u64) -> Array3<f64> {
    let (nx, ny) = cfg.patch;
    Array3::from_shape_vec((INPUT_CHANNELS, ny, nx), normals(seed, 3, INPUT_CHANNELS * nx * ny)).unwrap()
}

#[test]
fn criterion_08_neural_operator_numerics() {
    // Parameter count, counted from the stored tensors.
    let grid = grid_100();
    let mut configs: Vec<FfnoConfig> = DomainKind::ALL.iter().map(|&k| FfnoConfig::desk(k, &grid, 8, 32)).collect();
    configs.push(FfnoConfig { layers: 5, hidden: 64, modes: (18, 18), n_out: 8, patch: (41, 41) });
    configs.push(FfnoConfig { layers: 2, hidden: 4, modes: (3, 5), n_out: 3, patch: (9, 9) });
    let counts_ok = configs.iter().all(|c| {
        let counted: usize = tensor_table(c).iter().filter(|(name, ..)| name.contains("spec")).map(|(_, _, s)| s.iter().product::<usize>()).sum();
        let formula = 2 * c.layers * c.hidden * c.hidden * (c.modes.0 + c.modes.1);
        let total: usize = tensor_table(c).iter().map(|(_, _, s)| s.iter().product::<usize>()).sum();
        counted == formula && c.spectral_param_count() == formula && total == c.param_count()
    });

    // Input gradient against central differences, every input entry.
    let cfg = FfnoConfig { layers: 2, hidden: 4, modes: (4, 4), n_out: 3, patch: (9, 9) };
    let net = Ffno::init(cfg.clone(), 13).unwrap();
    let x = tiny_input(&cfg, 1);
    let w = Array3::from_shape_vec((3, 9, 9), normals(2, 3, 243)).unwrap();
    let objective = |x: &Array3<f64>| (net.forward(x).unwrap() * &w).sum();
    let (_, cache) = net.forward_cached(&x).unwrap();
    let (_, dx) = net.backward(&cache, &w);
    let h = 1e-5;
    let scale = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut grad_err = 0.0f64;
    for (idx, _) in x.indexed_iter() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[idx] += h;
        m[idx] -= h;
        let fd = (objective(&p) - objective(&m)) / (2.0 * h);
        grad_err = grad_err.max((fd - dx[idx]).abs() / fd.abs().max(1e-2 * scale));
    }

    // Fixed-seed single-thread training, twice.
    let small = GridPair::new(2, 17).unwrap();
    let samples: Vec<PatchSample> = (0..2u64)
        .flat_map(|i| {
            let kappa = sample_kle_field(kle(), mix(8, i), &small).unwrap();
            extract_patches(&small, &kappa, Some(&offline_basis(&small, &kappa, 3).unwrap().0)).unwrap()
        })
        .filter(|p| p.kind == DomainKind::Half)
        .collect();
    let refs: Vec<&PatchSample> = samples.iter().collect();
    let stats = NormStats::from_patches(refs.iter().map(|s| &s.log_kappa)).unwrap();
    let data = prepare(&refs, &stats).unwrap();
    let tcfg = FfnoConfig { layers: 2, hidden: 4, modes: (4, 4), n_out: 3, patch: DomainKind::Half.canonical_shape(&small) };
    let opts = TrainOptions { epochs: 4, batch: 3, seed: 21, ..TrainOptions::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || pool.install(|| train(tcfg.clone(), &data, &LossSpec::new(LossKind::SalPr), &opts).unwrap());
    let (r1, r2) = (run(), run());
    let bitwise = r1.model.params.iter().zip(&r2.model.params).all(|(a, b)| a.to_bits() == b.to_bits())
        && r1.loss_curve.iter().zip(&r2.loss_curve).all(|(a, b)| a.to_bits() == b.to_bits());

    verdict(
        8,
        "neural-operator numerics",
        counts_ok && grad_err <= 1e-4 && bitwise,
        format!(
            "parameter counts {} on {} configs, input gradient vs FD {grad_err:.1e} (tol 1e-4), training {}",
            if counts_ok { "exact" } else { "WRONG" },
            configs.len(),
            if bitwise { "bitwise reproducible" } else { "NOT reproducible" }
        ),
    );
}

// --------------------------------------------------------------- 10

#[test]
fn criterion_10_breakeven_arithmetic() {
    let z = normals(10, 1, 400);
    let mut worst = 0.0f64;
    let (mut finite, mut infinite) = (0, 0);
    for i in 0..100 {
        let [t_data, t_train, t_inf, t_gmsfem] = [0, 1, 2, 3].map(|j| (2.0 * z[4 * i + j]).exp());
        let x = breakeven(t_data, t_train, t_inf, t_gmsfem).unwrap();
        if t_gmsfem > t_inf {
            finite += 1;
            let lhs = t_data + t_train + t_inf * x;
            let rhs = t_gmsfem * x;
            worst = worst.max((lhs - rhs).abs() / lhs.max(rhs));
        } else {
            infinite += 1;
            assert!(x.is_infinite());
        }
    }
    verdict(
        10,
        "breakeven arithmetic",
        worst <= 1e-12 && finite > 0,
        format!("100 random inputs ({finite} finite, {infinite} never break even), balance residual {worst:.1e} (tol 1e-12)"),
    );
}
