//! Labeled client datasets inside the feature world, under a pathological
//! base/novel class split or a Dirichlet label skew.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::feature_space::FeatureBasis;
use crate::linalg::{self, axpy};
use crate::report::fmt_f64;

pub const DATASET_SCHEMA: &str = "# schema: fedmgp.dataset.v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub n_classes: usize,
    /// Per-class directions, orthonormal and orthogonal to the basis frame.
    pub class_dirs: Vec<Vec<f64>>,
    /// `prototype(k) = u_C + q_k`.
    pub prototypes: Vec<Vec<f64>>,
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub samples: Vec<Sample>,
    pub n: usize,
    pub class_proportions: Vec<f64>,
}

impl ClientDataset {
    pub fn classes(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.y)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Base classes are the first `⌈K/2⌉` ids, novel the rest.
pub fn base_novel(n_classes: usize) -> (Vec<usize>, Vec<usize>) {
    let n_base = n_classes.div_ceil(2);
    ((0..n_base).collect(), (n_base..n_classes).collect())
}

pub fn build_task<R: Rng + ?Sized>(
    n_classes: usize,
    basis: &FeatureBasis,
    rng: &mut R,
) -> Result<SyntheticTask> {
    if n_classes == 0 {
        return Err(Error::InvalidParameter("n_classes must be positive".into()));
    }
    let mut frame = basis.frame();
    let class_dirs = linalg::extend_orthonormal(&mut frame, basis.dim, n_classes, rng)?;
    let prototypes = class_dirs
        .iter()
        .map(|q| linalg::add(&basis.global_dir, q))
        .collect();
    let (base_classes, novel_classes) = base_novel(n_classes);
    Ok(SyntheticTask {
        n_classes,
        class_dirs,
        prototypes,
        base_classes,
        novel_classes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    pub base_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    /// Disjoint base-class sets, one per client.
    pub assignments: Vec<Vec<usize>>,
}

pub fn pathological_split<R: Rng + ?Sized>(
    n_classes: usize,
    n_clients: usize,
    rng: &mut R,
) -> Result<ClassSplit> {
    let (base_classes, novel_classes) = base_novel(n_classes);
    if n_clients == 0 || base_classes.len() < n_clients {
        return Err(Error::InfeasibleSplit {
            base: base_classes.len(),
            clients: n_clients,
        });
    }
    let mut shuffled = base_classes.clone();
    shuffled.shuffle(rng);
    let per = shuffled.len() / n_clients;
    let extra = shuffled.len() % n_clients;
    let mut assignments = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let take = per + usize::from(c < extra);
        let mut group = shuffled[start..start + take].to_vec();
        group.sort_unstable();
        assignments.push(group);
        start += take;
    }
    Ok(ClassSplit {
        base_classes,
        novel_classes,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPartition {
    /// `counts[c][k]`: samples of class `k` at client `c`.
    pub counts: Vec<Vec<usize>>,
    /// Per-client class proportions (uniform for clients left empty).
    pub proportions: Vec<Vec<f64>>,
}

/// Largest-remainder rounding of `total · shares`; conserves `total` exactly.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // Largest fractional part first; ties go to the lower index.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn dirichlet_partition<R: Rng + ?Sized>(
    n_classes: usize,
    n_clients: usize,
    alpha: f64,
    total_per_class: usize,
    rng: &mut R,
) -> Result<DirichletPartition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if total_per_class == 0 || n_clients == 0 || n_classes == 0 {
        return Err(Error::InvalidParameter(
            "classes, clients and per-class totals must be positive".into(),
        ));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidParameter(format!("gamma({alpha}): {e}")))?;
    let mut counts = vec![vec![0usize; n_classes]; n_clients];
    for k in 0..n_classes {
        let mut shares: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
        if shares.iter().sum::<f64>() <= 0.0 {
            // All draws underflowed: the limit of Dir(α→0) is a point mass.
            let pick = rng.random_range(0..n_clients);
            shares.iter_mut().enumerate().for_each(|(i, s)| *s = f64::from(u8::from(i == pick)));
        }
        for (c, n) in largest_remainder(&shares, total_per_class).into_iter().enumerate() {
            counts[c][k] = n;
        }
    }
    let proportions = counts.iter().map(|row| proportions_of(row)).collect();
    Ok(DirichletPartition {
        counts,
        proportions,
    })
}

fn proportions_of(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}

/// Scale parameters of the sample model
/// `x = signal·prototype(y) + shift·μ_c + σ·Σ_l η_l ξ_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleModel {
    pub signal_scale: f64,
    pub client_shift: f64,
    pub noise_sigma: f64,
}

pub fn draw_sample<R: Rng + ?Sized>(
    task: &SyntheticTask,
    basis: &FeatureBasis,
    class: usize,
    shift_client: Option<usize>,
    model: SampleModel,
    rng: &mut R,
) -> Sample {
    let mut x = linalg::scaled(&task.prototypes[class], model.signal_scale);
    if let Some(c) = shift_client {
        axpy(&mut x, model.client_shift, &basis.client_dirs[c]);
    }
    for xi in &basis.noise_dirs {
        let eta: f64 = rng.sample(StandardNormal);
        axpy(&mut x, model.noise_sigma * eta, xi);
    }
    Sample { x, y: class }
}

/// `allowed = Some(classes)` enforces pathological mode.
pub fn generate_client_data<R: Rng + ?Sized>(
    task: &SyntheticTask,
    basis: &FeatureBasis,
    client_id: usize,
    counts: &[usize],
    model: SampleModel,
    allowed: Option<&[usize]>,
    rng: &mut R,
) -> Result<ClientDataset> {
    if counts.len() != task.n_classes {
        return Err(Error::LengthMismatch {
            expected: task.n_classes,
            actual: counts.len(),
        });
    }
    if client_id >= basis.n_clients() {
        return Err(Error::IndexOutOfRange {
            index: client_id,
            len: basis.n_clients(),
        });
    }
    if let Some(allowed) = allowed {
        if let Some(k) = (0..counts.len()).find(|k| counts[*k] > 0 && !allowed.contains(k)) {
            return Err(Error::ClassNotAssigned {
                class: k,
                client: client_id,
            });
        }
    }
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (k, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            samples.push(draw_sample(task, basis, k, Some(client_id), model, rng));
        }
    }
    Ok(ClientDataset {
        client_id,
        n: samples.len(),
        class_proportions: proportions_of(counts),
        samples,
    })
}

/// A held-out set classified among `candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub samples: Vec<Sample>,
    pub candidates: Vec<usize>,
}

impl EvalSet {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The three held-out sets of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientEvalSets {
    pub local: EvalSet,
    pub base_other: EvalSet,
    pub novel: EvalSet,
}

/// Draws `per_class` samples of each `(class, shift owner)` pair.
pub fn eval_set<R: Rng + ?Sized>(
    task: &SyntheticTask,
    basis: &FeatureBasis,
    classes: &[(usize, Option<usize>)],
    per_class: usize,
    model: SampleModel,
    rng: &mut R,
) -> EvalSet {
    let mut samples = Vec::with_capacity(classes.len() * per_class);
    for &(k, owner) in classes {
        for _ in 0..per_class {
            samples.push(draw_sample(task, basis, k, owner, model, rng));
        }
    }
    let mut candidates: Vec<usize> = classes.iter().map(|(k, _)| *k).collect();
    candidates.sort_unstable();
    candidates.dedup();
    EvalSet {
        samples,
        candidates,
    }
}

/// Columnar text format: a schema line, a header, then one row per sample.
pub fn write_datasets<W: Write>(out: &mut W, datasets: &[ClientDataset]) -> Result<()> {
    writeln!(out, "{DATASET_SCHEMA}")?;
    let dim = datasets
        .iter()
        .flat_map(|d| d.samples.first())
        .map(|s| s.x.len())
        .next()
        .unwrap_or(0);
    let mut header = String::from("client_id,y");
    for i in 0..dim {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(out, "{header}")?;
    for d in datasets {
        for s in &d.samples {
            let mut row = format!("{},{}", d.client_id, s.y);
            for v in &s.x {
                row.push(',');
                row.push_str(&fmt_f64(*v));
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

/// Reads rows back as `(client_id, sample)` pairs.
pub fn read_datasets<B: BufRead>(input: B) -> Result<Vec<(usize, Sample)>> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if line.starts_with("client_id") {
            dim = Some(line.split(',').count() - 2);
            continue;
        }
        let bad = |message: String| Error::ConfigParse {
            line: lineno,
            message,
        };
        let mut fields = line.split(',');
        let client: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad client_id".into()))?;
        let y: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("bad label".into()))?;
        let x = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("bad feature: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(d) = dim {
            if x.len() != d {
                return Err(bad(format!("expected {d} features, got {}", x.len())));
            }
        }
        rows.push((client, Sample { x, y }));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_space::build_basis;
    use crate::linalg::{norm, sub};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn pathological_one_class_each() {
        let split = pathological_split(10, 5, &mut rng(1)).unwrap();
        assert_eq!(split.base_classes.len(), 5);
        assert!(split.assignments.iter().all(|a| a.len() == 1));
        let union: BTreeSet<usize> = split.assignments.iter().flatten().copied().collect();
        assert_eq!(union.len(), 5);
    }

    #[test]
    fn pathological_infeasible() {
        assert!(matches!(
            pathological_split(4, 5, &mut rng(1)),
            Err(Error::InfeasibleSplit { base: 2, clients: 5 })
        ));
    }

    #[test]
    fn pathological_hundred_classes() {
        let split = pathological_split(100, 10, &mut rng(2)).unwrap();
        let mut seen = BTreeSet::new();
        for a in &split.assignments {
            assert_eq!(a.len(), 5);
            for k in a {
                assert!(seen.insert(*k), "class {k} assigned twice");
                assert!(*k < 50);
            }
        }
        assert_eq!(seen.len(), 50);
    }

    #[test]
    fn uneven_split_sizes_differ_by_at_most_one() {
        let split = pathological_split(15, 3, &mut rng(3)).unwrap();
        let sizes: Vec<usize> = split.assignments.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 8);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn dirichlet_large_alpha_is_near_uniform() {
        let p = dirichlet_partition(6, 4, 1e6, 100, &mut rng(4)).unwrap();
        for row in &p.counts {
            for &n in row {
                assert!((24..=26).contains(&n), "{n}");
            }
        }
    }

    #[test]
    fn dirichlet_conserves_totals() {
        for (alpha, seed) in [(0.05, 1), (0.5, 2), (1.0, 3), (100.0, 4)] {
            let p = dirichlet_partition(7, 9, alpha, 37, &mut rng(seed)).unwrap();
            for k in 0..7 {
                assert_eq!(p.counts.iter().map(|r| r[k]).sum::<usize>(), 37);
            }
            for row in &p.proportions {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn smaller_alpha_means_more_skew() {
        let variance = |alpha: f64| {
            let p = dirichlet_partition(10, 100, alpha, 1000, &mut rng(11)).unwrap();
            let all: Vec<f64> = p.proportions.iter().flatten().copied().collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64
        };
        assert!(variance(0.5) > variance(100.0));
    }

    #[test]
    fn dirichlet_rejects_bad_alpha() {
        assert!(dirichlet_partition(3, 3, 0.0, 10, &mut rng(1)).is_err());
        assert!(dirichlet_partition(3, 3, -1.0, 10, &mut rng(1)).is_err());
    }

    fn world() -> (FeatureBasis, SyntheticTask) {
        let mut r = rng(9);
        let basis = build_basis(24, 3, 4, 0.3, &mut r).unwrap();
        let task = build_task(6, &basis, &mut r).unwrap();
        (basis, task)
    }

    #[test]
    fn noiseless_samples_equal_scaled_prototypes() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.5,
            client_shift: 0.0,
            noise_sigma: 0.0,
        };
        let d = generate_client_data(&task, &basis, 1, &[2, 0, 3, 0, 0, 0], model, None, &mut rng(1))
            .unwrap();
        assert_eq!(d.n, 5);
        for s in &d.samples {
            assert_eq!(s.x, linalg::scaled(&task.prototypes[s.y], 1.5));
        }
    }

    #[test]
    fn zero_counts_give_empty_dataset() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 1.0,
            noise_sigma: 1.0,
        };
        let d = generate_client_data(&task, &basis, 0, &[0; 6], model, None, &mut rng(1)).unwrap();
        assert_eq!(d.n, 0);
        assert!(d.samples.is_empty());
    }

    #[test]
    fn unassigned_class_is_rejected() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 1.0,
            noise_sigma: 0.1,
        };
        let err = generate_client_data(&task, &basis, 0, &[1, 1, 0, 0, 0, 0], model, Some(&[0]), &mut rng(1));
        assert!(matches!(err, Err(Error::ClassNotAssigned { class: 1, client: 0 })));
    }

    #[test]
    fn class_means_concentrate() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 0.7,
            noise_sigma: 0.1,
        };
        let mut counts = vec![0; 6];
        counts[2] = 200;
        let d = generate_client_data(&task, &basis, 2, &counts, model, None, &mut rng(5)).unwrap();
        let mut mean = vec![0.0; basis.dim];
        for s in &d.samples {
            axpy(&mut mean, 1.0 / 200.0, &s.x);
        }
        let mut expected = linalg::scaled(&task.prototypes[2], 1.0);
        axpy(&mut expected, 0.7, &basis.client_dirs[2]);
        let l = basis.n_noise() as f64;
        let bound = 3.0 * (0.1 * l.sqrt() / 200f64.sqrt()) * (basis.dim as f64).sqrt();
        assert!(norm(&sub(&mean, &expected)) < bound);
    }

    #[test]
    fn same_seed_same_data() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 0.5,
            noise_sigma: 0.3,
        };
        let make = || {
            generate_client_data(&task, &basis, 0, &[3, 2, 1, 0, 0, 0], model, None, &mut rng(77))
                .unwrap()
        };
        let (a, b) = (make(), make());
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_datasets(&mut ba, &[a]).unwrap();
        write_datasets(&mut bb, &[b]).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn text_format_round_trip() {
        let (basis, task) = world();
        let model = SampleModel {
            signal_scale: 1.0,
            client_shift: 0.5,
            noise_sigma: 0.3,
        };
        let d = generate_client_data(&task, &basis, 1, &[1, 1, 0, 0, 0, 2], model, None, &mut rng(8))
            .unwrap();
        let mut buf = Vec::new();
        write_datasets(&mut buf, std::slice::from_ref(&d)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(DATASET_SCHEMA));
        assert!(text.lines().nth(1).unwrap().starts_with("client_id,y,x0,x1"));
        let rows = read_datasets(&buf[..]).unwrap();
        assert_eq!(rows.len(), 4);
        for ((client, s), orig) in rows.iter().zip(&d.samples) {
            assert_eq!(*client, 1);
            assert_eq!(s.y, orig.y);
            for (a, b) in s.x.iter().zip(&orig.x) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300) + 1e-300);
            }
        }
    }
}
