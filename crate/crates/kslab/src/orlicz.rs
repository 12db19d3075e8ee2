//! Young pair Phi(t) = t*log(1+t), Psi = its Legendre conjugate, and the
//! induced Luxemburg and Orlicz norms on grid fields.

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Phi(t) = t*log(1+t). Rejects negative input.
pub fn phi(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "phi needs a nonnegative argument, got {t}"
        )));
    }
    Ok(t * t.ln_1p())
}

fn phi_abs(t: f64) -> f64 {
    let t = t.abs();
    t * t.ln_1p()
}

/// Conjugate Psi(s) = max_t (ts - Phi(t)), found by solving the stationarity
/// condition log(1+t) + t/(1+t) = s with safeguarded Newton. The value is
/// returned as t*(s - log(1+t*)), which stays accurate for large s where
/// s*t - Phi(t) cancels. Saturates to +inf once t* overflows f64 (s > ~710).
pub fn psi(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "psi needs a nonnegative argument, got {s}"
        )));
    }
    if s == 0.0 {
        return Ok(0.0);
    }
    if s > 709.0 {
        return Ok(f64::INFINITY);
    }
    // g(t) = log(1+t) + t/(1+t) - s is strictly increasing from 0.
    let mut lo = 0.0_f64;
    let mut hi = if s > 1.5 { (s - 1.0).exp() * 2.0 } else { s };
    while hi.ln_1p() + hi / (1.0 + hi) < s {
        lo = hi;
        hi *= 2.0;
    }
    let mut t = if s > 1.5 { (s - 1.0).exp() } else { 0.5 * s };
    t = t.clamp(lo, hi);
    for iter in 0..100 {
        let g = t.ln_1p() + t / (1.0 + t) - s;
        if g.abs() <= 1e-13 * s.max(1.0) {
            return Ok(t * (s - t.ln_1p()));
        }
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let dg = (2.0 + t) / ((1.0 + t) * (1.0 + t));
        let mut next = t - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        t = next;
        if iter == 99 {
            return Err(Error::SolverDiverged {
                context: "psi stationarity",
                residual: g.abs(),
                iterations: 100,
            });
        }
    }
    unreachable!()
}

/// Modular of the conjugate: sum of Psi(|u|/a)*h^2, saturating at `cap` so
/// callers can probe far-too-small `a` without overflow.
fn psi_modular(u: &ScalarField, a: f64, cap: f64) -> f64 {
    let h2 = u.grid().h * u.grid().h;
    let mut total = 0.0;
    for &v in &u.values {
        let s = v.abs() / a;
        if s > 709.0 {
            return cap;
        }
        total += psi(s).expect("psi on nonnegative input") * h2;
        if total >= cap {
            return cap;
        }
    }
    total
}

/// Luxemburg norm inf{a > 0 : sum Psi(|u|/a) h^2 <= 1}, bisected to relative
/// width 1e-8 (upper endpoint returned, so the modular constraint holds).
pub fn luxemburg_norm(u: &ScalarField) -> Result<f64> {
    for &v in &u.values {
        if !v.is_finite() {
            return Err(Error::InvalidInput("luxemburg norm of non-finite field".into()));
        }
    }
    let vmax = u.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    if vmax == 0.0 {
        return Ok(0.0);
    }
    let mut hi = vmax;
    while psi_modular(u, hi, 2.0) > 1.0 {
        hi *= 2.0;
    }
    // Walk lo down until the modular constraint breaks; each passing value
    // tightens hi on the way.
    let mut lo = hi * 0.5;
    while psi_modular(u, lo, 2.0) <= 1.0 {
        hi = lo;
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok(0.0);
        }
    }
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        if psi_modular(u, mid, 2.0) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Modular sum Phi(|rho|) h^2.
pub fn modular_phi(rho: &ScalarField) -> f64 {
    let h2 = rho.grid().h * rho.grid().h;
    rho.values.iter().map(|&v| phi_abs(v)).sum::<f64>() * h2
}

fn amemiya_objective(rho: &ScalarField, k: f64) -> f64 {
    let h2 = rho.grid().h * rho.grid().h;
    let mut m = 0.0;
    for &v in &rho.values {
        m += phi_abs(k * v) * h2;
        if !m.is_finite() {
            return f64::INFINITY;
        }
    }
    (1.0 + m) / k
}

/// Orlicz norm via the Amemiya representation inf_k (1 + sum Phi(k|rho|)h^2)/k,
/// minimized by golden-section search on log k to relative tolerance 1e-8.
pub fn orlicz_norm(rho: &ScalarField) -> Result<f64> {
    for &v in &rho.values {
        if !v.is_finite() {
            return Err(Error::InvalidInput("orlicz norm of non-finite field".into()));
        }
    }
    if rho.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // Bracket the minimizer on a log grid, then golden-section.
    let mut best_ln = 0.0_f64;
    let mut best_val = f64::INFINITY;
    let mut ln_k = -60.0_f64;
    while ln_k <= 60.0 {
        let val = amemiya_objective(rho, ln_k.exp());
        if val < best_val {
            best_val = val;
            best_ln = ln_k;
        }
        ln_k += 1.0;
    }
    let mut a = best_ln - 1.5;
    let mut b = best_ln + 1.5;
    let inv_gold = 0.618_033_988_749_894_9_f64;
    let mut c = b - inv_gold * (b - a);
    let mut d = a + inv_gold * (b - a);
    let mut fc = amemiya_objective(rho, c.exp());
    let mut fd = amemiya_objective(rho, d.exp());
    for _ in 0..200 {
        if b - a <= 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_gold * (b - a);
            fc = amemiya_objective(rho, c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_gold * (b - a);
            fd = amemiya_objective(rho, d.exp());
        }
    }
    Ok(fc.min(fd))
}

/// Orlicz norm and Phi-modular of rho - rho_ref.
#[derive(Debug, Clone, Copy)]
pub struct OrliczDistance {
    pub phi_norm: f64,
    pub modular: f64,
}

pub fn distance(rho: &ScalarField, rho_ref: &ScalarField) -> Result<OrliczDistance> {
    if !rho.same_grid(rho_ref) {
        return Err(Error::InvalidInput(
            "orlicz distance needs both fields on one grid".into(),
        ));
    }
    let diff_values: Vec<f64> = rho
        .values
        .iter()
        .zip(&rho_ref.values)
        .map(|(a, b)| a - b)
        .collect();
    let diff = ScalarField::from_values(rho.grid(), rho.role, diff_values)?;
    Ok(OrliczDistance {
        phi_norm: orlicz_norm(&diff)?,
        modular: modular_phi(&diff),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, BoundaryRole, DomainSpec, MaskedGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn disk(res: u32) -> Arc<MaskedGrid> {
        build_grid(&DomainSpec::Ellipse { alpha: 1.0, beta: 1.0 }, res).unwrap()
    }

    fn random_field(grid: &Arc<MaskedGrid>, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
        let values = (0..grid.interior_count())
            .map(|_| rng.random_range(-amp..amp))
            .collect();
        ScalarField::from_values(grid, BoundaryRole::NoFlux, values).unwrap()
    }

    #[test]
    fn phi_values_and_doubling() {
        assert_eq!(phi(0.0).unwrap(), 0.0);
        assert!((phi(1.0).unwrap() - 2.0_f64.ln()).abs() < 1e-15);
        assert!(phi(-1.0).is_err());
        for t in [1.0, 3.7, 100.0] {
            assert!(phi(2.0 * t).unwrap() <= 4.0 * phi(t).unwrap() + 1e-12);
        }
    }

    #[test]
    fn phi_sandwiches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let t: f64 = rng.random_range(0.0..1.0);
            let p = phi(t).unwrap();
            assert!(0.5 * t * t <= p + 1e-12 && p <= t * t + 1e-12, "t={t}");
        }
        for t in [1.0, 2.0, 10.0, 1e4] {
            let p = phi(t).unwrap();
            assert!(p <= t * t + 1e-9);
            assert!(p >= t * 2.0_f64.ln() - 1e-9);
        }
        // t <= Phi(t) holds from e-1 on, where log(1+t) reaches 1.
        let knee = std::f64::consts::E - 1.0;
        assert!(phi(knee).unwrap() >= knee - 1e-12);
        for t in [2.0, 5.0, 50.0] {
            assert!(phi(t).unwrap() >= t);
        }
        assert!(phi(1.0).unwrap() < 1.0);
    }

    #[test]
    fn psi_closed_points() {
        assert_eq!(psi(0.0).unwrap(), 0.0);
        // Transform attained at t* = 1 when s = log 2 + 1/2.
        let s = 2.0_f64.ln() + 0.5;
        assert!((psi(s).unwrap() - 0.5).abs() < 1e-8);
        assert!(psi(-0.1).is_err());
    }

    #[test]
    fn psi_growth_sandwich() {
        // Psi(s) <= e^{s-1} - 1 + e^{1-s} for all s >= 0, and from s = 1 on
        // also Psi(s) >= e^{s-1} - 2 + e^{1-s}: a width-one sandwich that
        // checks the Newton solve independently.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let s: f64 = rng.random_range(0.0..40.0);
            let p = psi(s).unwrap();
            let e = (s - 1.0).exp();
            let einv = (1.0 - s).exp();
            assert!(p <= e - 1.0 + einv + 1e-9 * e.max(1.0), "s={s} psi={p}");
            if s >= 1.0 {
                assert!(p >= e - 2.0 + einv - 1e-9 * e.max(1.0), "s={s} psi={p}");
            }
            assert!(p <= s * e + 1e-10, "s={s}");
        }
        // Spot value: at s=3 the conjugate is t*^2/(1+t*) with t* ~ 7.3316.
        let p3 = psi(3.0).unwrap();
        assert!((p3 - 6.4508).abs() < 1e-3, "psi(3) = {p3}");
        assert!(p3 <= 3.0 * 2.0_f64.exp());
    }

    #[test]
    fn young_inequality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5000 {
            let t: f64 = rng.random_range(0.0..50.0);
            let s: f64 = rng.random_range(0.0..20.0);
            let slack = phi(t).unwrap() + psi(s).unwrap() - t * s;
            assert!(slack >= -1e-10, "t={t} s={s} slack={slack}");
        }
    }

    #[test]
    fn luxemburg_zero_and_homogeneity() {
        let g = disk(10);
        let zero = ScalarField::zeros(&g, BoundaryRole::NoFlux);
        assert_eq!(luxemburg_norm(&zero).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let u = random_field(&g, &mut rng, 3.0);
        let mut scaled = u.clone();
        for v in &mut scaled.values {
            *v *= 2.5;
        }
        let n1 = luxemburg_norm(&u).unwrap();
        let n2 = luxemburg_norm(&scaled).unwrap();
        assert!(
            (n2 - 2.5 * n1).abs() <= 1e-6 * n2.max(1.0),
            "homogeneity: {n2} vs {}",
            2.5 * n1
        );
    }

    #[test]
    fn luxemburg_constant_field_matches_scalar_root() {
        // For u == 1 the norm solves A * Psi(1/a) = 1; bisect that scalar
        // equation independently and compare.
        let g = disk(20);
        let area = g.cell_area_total();
        let u = ScalarField::from_fn(&g, BoundaryRole::NoFlux, |_, _| 1.0);
        let norm = luxemburg_norm(&u).unwrap();
        let mut lo = 1e-6;
        let mut hi = 1e6;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if area * psi(1.0 / mid).unwrap() > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(
            (norm - hi).abs() <= 1e-6 * hi,
            "bisection {norm} vs scalar oracle {hi}"
        );
    }

    #[test]
    fn luxemburg_norm_modular_consistency() {
        let g = disk(10);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let u = random_field(&g, &mut rng, 2.0);
            let n = luxemburg_norm(&u).unwrap();
            // At the norm the conjugate modular sits at 1.
            let m = psi_modular(&u, n, 10.0);
            assert!(m <= 1.0 + 1e-6, "modular at the norm: {m}");
            let m_under = psi_modular(&u, n * (1.0 - 1e-4), 10.0);
            assert!(m_under >= 1.0 - 1e-3, "norm too large: modular {m_under}");
        }
    }

    #[test]
    fn orlicz_norm_axioms_and_hoelder() {
        let g = disk(8);
        let h2 = g.h * g.h;
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let zero = ScalarField::zeros(&g, BoundaryRole::NoFlux);
        assert_eq!(orlicz_norm(&zero).unwrap(), 0.0);
        for _ in 0..100 {
            let r1 = random_field(&g, &mut rng, 4.0);
            let r2 = random_field(&g, &mut rng, 4.0);
            let mut sum = r1.clone();
            for (v, w) in sum.values.iter_mut().zip(&r2.values) {
                *v += w;
            }
            let n1 = orlicz_norm(&r1).unwrap();
            let n2 = orlicz_norm(&r2).unwrap();
            let ns = orlicz_norm(&sum).unwrap();
            assert!(ns <= n1 + n2 + 1e-6, "triangle: {ns} vs {}", n1 + n2);

            let pairing: f64 = r1
                .values
                .iter()
                .zip(&r2.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * h2;
            let lux = luxemburg_norm(&r2).unwrap();
            assert!(
                pairing.abs() <= n1 * lux * (1.0 + 1e-8) + 1e-10,
                "pairing bound: {} vs {}",
                pairing.abs(),
                n1 * lux
            );
        }
    }

    #[test]
    fn l1_domination_by_modular() {
        let g = disk(10);
        let h2 = g.h * g.h;
        let area = g.cell_area_total();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let amp = rng.random_range(0.1..20.0);
            let r = random_field(&g, &mut rng, amp);
            let l1: f64 = r.values.iter().map(|v| v.abs()).sum::<f64>() * h2;
            let m = modular_phi(&r);
            assert!(
                l1 <= area.sqrt() * (2.0 * m).sqrt() + m + 1e-9,
                "l1 {l1} vs bound {}",
                area.sqrt() * (2.0 * m).sqrt() + m
            );
        }
    }

    #[test]
    fn norm_and_modular_decay_together() {
        let g = disk(10);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let base = random_field(&g, &mut rng, 1.0);
        let noise = random_field(&g, &mut rng, 1.0);
        let mut prev_norm = f64::INFINITY;
        let mut prev_mod = f64::INFINITY;
        for n in 1..=8 {
            let mut pert = base.clone();
            for (v, w) in pert.values.iter_mut().zip(&noise.values) {
                *v += w / n as f64;
            }
            let d = distance(&pert, &base).unwrap();
            assert!(d.phi_norm < prev_norm);
            assert!(d.modular < prev_mod);
            prev_norm = d.phi_norm;
            prev_mod = d.modular;
        }
    }

    #[test]
    fn distance_zero_iff_equal() {
        let g = disk(8);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let r = random_field(&g, &mut rng, 2.0);
        let d = distance(&r, &r).unwrap();
        assert_eq!(d.phi_norm, 0.0);
        assert_eq!(d.modular, 0.0);
    }
}
