//! The orthogonal feature world: one global direction, per-client
//! directions with a tunable overlap, and task-irrelevant noise directions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, axpy, check_len, dot, norm_sq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub dim: usize,
    /// Shared task direction `u_C`.
    pub global_dir: Vec<f64>,
    /// Client directions `μ_c`, with `⟨μ_c, μ_c'⟩ = ρ` for `c ≠ c'`.
    pub client_dirs: Vec<Vec<f64>>,
    /// Task-irrelevant directions `ξ_l`.
    pub noise_dirs: Vec<Vec<f64>>,
    pub mixing_rho: f64,
    /// Shared component `w` of the client directions (absent when ρ = 0).
    pub shared_dir: Option<Vec<f64>>,
    /// Private components `v_c` (absent when ρ = 1).
    pub private_dirs: Vec<Vec<f64>>,
}

/// Coefficients of a vector against the basis for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub beta: f64,
    pub gamma: f64,
    pub phi: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub specific_strength: f64,
}

impl FeatureBasis {
    pub fn n_clients(&self) -> usize {
        self.client_dirs.len()
    }

    pub fn n_noise(&self) -> usize {
        self.noise_dirs.len()
    }

    /// The orthonormal vectors the basis occupies: `u_C`, `w`, `v_c`, `ξ_l`.
    pub fn frame(&self) -> Vec<Vec<f64>> {
        let mut f = vec![self.global_dir.clone()];
        if let Some(w) = &self.shared_dir {
            f.push(w.clone());
        }
        f.extend(self.private_dirs.iter().cloned());
        f.extend(self.noise_dirs.iter().cloned());
        f
    }

    fn client(&self, client_id: usize) -> Result<&[f64]> {
        self.client_dirs
            .get(client_id)
            .map(Vec::as_slice)
            .ok_or(Error::IndexOutOfRange {
                index: client_id,
                len: self.client_dirs.len(),
            })
    }
}

/// Dimensions needed to host `u_C`, the client subspace and the noise.
pub fn required_dim(n_clients: usize, n_noise: usize, mixing_rho: f64) -> usize {
    // The shared direction `w` needs its own slot only when 0 < ρ < 1.
    let client_span = if mixing_rho > 0.0 && mixing_rho < 1.0 {
        n_clients + 1
    } else {
        n_clients
    };
    1 + client_span + n_noise
}

pub fn build_basis<R: Rng + ?Sized>(
    dim: usize,
    n_clients: usize,
    n_noise: usize,
    mixing_rho: f64,
    rng: &mut R,
) -> Result<FeatureBasis> {
    if n_clients == 0 {
        return Err(Error::InvalidParameter("n_clients must be positive".into()));
    }
    if n_noise == 0 {
        return Err(Error::InvalidParameter("n_noise must be positive".into()));
    }
    if !(0.0..=1.0).contains(&mixing_rho) {
        return Err(Error::InvalidParameter(format!(
            "mixing_rho {mixing_rho} outside [0, 1]"
        )));
    }
    let required = required_dim(n_clients, n_noise, mixing_rho);
    if dim < required {
        return Err(Error::DimensionTooSmall { dim, required });
    }

    let mut frame = Vec::new();
    let global_dir = linalg::extend_orthonormal(&mut frame, dim, 1, rng)?.remove(0);
    let shared_dir = if mixing_rho > 0.0 {
        Some(linalg::extend_orthonormal(&mut frame, dim, 1, rng)?.remove(0))
    } else {
        None
    };
    let private_dirs = if mixing_rho < 1.0 {
        linalg::extend_orthonormal(&mut frame, dim, n_clients, rng)?
    } else {
        Vec::new()
    };
    let noise_dirs = linalg::extend_orthonormal(&mut frame, dim, n_noise, rng)?;

    let (a, b) = (mixing_rho.sqrt(), (1.0 - mixing_rho).sqrt());
    let client_dirs = (0..n_clients)
        .map(|c| {
            let mut mu = vec![0.0; dim];
            if let Some(w) = &shared_dir {
                axpy(&mut mu, a, w);
            }
            if let Some(v) = private_dirs.get(c) {
                axpy(&mut mu, b, v);
            }
            mu
        })
        .collect();

    Ok(FeatureBasis {
        dim,
        global_dir,
        client_dirs,
        noise_dirs,
        mixing_rho,
        shared_dir,
        private_dirs,
    })
}

pub fn decompose(v: &[f64], basis: &FeatureBasis, client_id: usize) -> Result<Decomposition> {
    check_len(v, basis.dim)?;
    let mu = basis.client(client_id)?;
    let beta = dot(v, &basis.global_dir);
    let mut rest = v.to_vec();
    axpy(&mut rest, -beta, &basis.global_dir);
    // μ_c ⊥ u_C, so projecting the remainder equals projecting v.
    let gamma = dot(&rest, mu);
    axpy(&mut rest, -gamma, mu);
    let phi: Vec<f64> = basis.noise_dirs.iter().map(|xi| dot(v, xi)).collect();
    for (p, xi) in phi.iter().zip(&basis.noise_dirs) {
        axpy(&mut rest, -p, xi);
    }
    let residual_norm = norm_sq(&rest).sqrt();
    let specific_strength =
        (gamma * gamma + phi.iter().map(|p| p * p).sum::<f64>() + residual_norm * residual_norm)
            .sqrt();
    Ok(Decomposition {
        beta,
        gamma,
        phi,
        residual: rest,
        residual_norm,
        specific_strength,
    })
}

pub fn compose(dec: &Decomposition, basis: &FeatureBasis, client_id: usize) -> Result<Vec<f64>> {
    let mu = basis.client(client_id)?;
    check_len(&dec.residual, basis.dim)?;
    let mut v = dec.residual.clone();
    axpy(&mut v, dec.beta, &basis.global_dir);
    axpy(&mut v, dec.gamma, mu);
    for (p, xi) in dec.phi.iter().zip(&basis.noise_dirs) {
        axpy(&mut v, *p, xi);
    }
    Ok(v)
}

/// `χ_c = Σ_c' ⟨μ_c, μ_c'⟩`.
pub fn heterogeneity(basis: &FeatureBasis, client_id: usize) -> Result<f64> {
    let mu = basis.client(client_id)?;
    Ok(basis.client_dirs.iter().map(|other| dot(mu, other)).sum())
}

/// Cosine between `c·u_C + s·u_S` and `u_C`: `c / √(c² + s²)`.
pub fn theory_similarity(c_coef: f64, s_coef: f64) -> Result<f64> {
    let n = c_coef.hypot(s_coef);
    if n == 0.0 {
        return Err(Error::ZeroNorm {
            context: "theory similarity with c = s = 0",
        });
    }
    Ok(c_coef / n)
}
