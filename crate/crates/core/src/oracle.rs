//! Full steady-state solution of the rotating-frame equations of motion,
//! without any expansion in the probe field.
//!
//! The six density-matrix equations are split into nine real equations with
//! unknowns ordered `[ρ11, ρ22, ρ33, Re ρ21, Im ρ21, Re ρ31, Im ρ31, Re ρ32, Im ρ32]`.
//! Row `k` of [`SteadyStateSystem::matrix`] holds the coefficients of
//! `d x_k / dt`; the only source term is the replenishment `Λ` in the ρ11 row,
//! so the steady state solves `matrix · x = rhs` with `rhs = [−Λ, 0, …, 0]`.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::system::{CascadeSystem, DensityState, DriveParams};

pub const DIM: usize = 9;

pub const RHO11: usize = 0;
pub const RHO22: usize = 1;
pub const RHO33: usize = 2;
pub const RE21: usize = 3;
pub const IM21: usize = 4;
pub const RE31: usize = 5;
pub const IM31: usize = 6;
pub const RE32: usize = 7;
pub const IM32: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSystem {
    pub matrix: SMatrix<f64, DIM, DIM>,
    pub rhs: SVector<f64, DIM>,
}

pub fn assemble(sys: &CascadeSystem, drv: &DriveParams) -> SteadyStateSystem {
    let w = sys.transit;
    let (g1, g2) = (drv.g1, drv.g2);
    let (d1, d2) = (drv.delta1, drv.delta2);
    let d12 = d1 + d2;
    let g21w = sys.gamma21() + w;
    let g31w = sys.gamma31() + w;
    let g32w = sys.gamma32() + w;
    let h1 = 0.5 * g1;
    let h2 = 0.5 * g2;

    let mut m = SMatrix::<f64, DIM, DIM>::zeros();

    // dρ11/dt = g1 Im ρ21 + W21 ρ22 − w ρ11 + Λ
    m[(RHO11, RHO11)] = -w;
    m[(RHO11, RHO22)] = sys.w21();
    m[(RHO11, IM21)] = g1;

    // dρ22/dt = −g1 Im ρ21 + g2 Im ρ32 − (γ2 + w) ρ22 + W32 ρ33
    m[(RHO22, RHO22)] = -(sys.gamma2 + w);
    m[(RHO22, RHO33)] = sys.w32();
    m[(RHO22, IM21)] = -g1;
    m[(RHO22, IM32)] = g2;

    // dρ33/dt = −g2 Im ρ32 − (γ3 + w) ρ33
    m[(RHO33, RHO33)] = -(sys.gamma3 + w);
    m[(RHO33, IM32)] = -g2;

    // dρ21/dt = i(g1/2)(ρ22 − ρ11) − i(g2/2) ρ31 + iΔ1 ρ21 − (γ21 + w) ρ21
    m[(RE21, RE21)] = -g21w;
    m[(RE21, IM21)] = -d1;
    m[(RE21, IM31)] = h2;
    m[(IM21, RHO11)] = -h1;
    m[(IM21, RHO22)] = h1;
    m[(IM21, RE21)] = d1;
    m[(IM21, IM21)] = -g21w;
    m[(IM21, RE31)] = -h2;

    // dρ31/dt = i(g1/2) ρ32 − i(g2/2) ρ21 − (γ31 + w) ρ31 + i(Δ1 + Δ2) ρ31
    m[(RE31, IM21)] = h2;
    m[(RE31, RE31)] = -g31w;
    m[(RE31, IM31)] = -d12;
    m[(RE31, IM32)] = -h1;
    m[(IM31, RE21)] = -h2;
    m[(IM31, RE31)] = d12;
    m[(IM31, IM31)] = -g31w;
    m[(IM31, RE32)] = h1;

    // dρ32/dt = i(g2/2)(ρ33 − ρ22) + i(g1/2) ρ31 + iΔ2 ρ32 − (γ32 + w) ρ32
    m[(RE32, IM31)] = -h1;
    m[(RE32, RE32)] = -g32w;
    m[(RE32, IM32)] = -d2;
    m[(IM32, RHO22)] = -h2;
    m[(IM32, RHO33)] = h2;
    m[(IM32, RE31)] = h1;
    m[(IM32, RE32)] = d2;
    m[(IM32, IM32)] = -g32w;

    let mut rhs = SVector::<f64, DIM>::zeros();
    rhs[RHO11] = -sys.replenish;
    SteadyStateSystem { matrix: m, rhs }
}

/// Dense LU solve (partial pivoting) of the assembled steady-state system.
pub fn solve_steady_state(sys: &CascadeSystem, drv: &DriveParams) -> Result<DensityState> {
    if !(sys.transit > 0.0) {
        return Err(Error::SingularSystem);
    }
    drv.check_finite()?;
    let ss = assemble(sys, drv);
    let x = ss.matrix.lu().solve(&ss.rhs).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let residual = (ss.matrix * x - ss.rhs).norm() / ss.rhs.norm().max(f64::MIN_POSITIVE);
    if residual > 1e-10 {
        return Err(Error::SingularSystem);
    }
    Ok(DensityState {
        rho11: x[RHO11],
        rho22: x[RHO22],
        rho33: x[RHO33],
        rho21: Complex64::new(x[RE21], x[IM21]),
        rho31: Complex64::new(x[RE31], x[IM31]),
        rho32: Complex64::new(x[RE32], x[IM32]),
    })
}
