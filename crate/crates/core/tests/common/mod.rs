#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rydopt::control::{ControlField, TimeGrid};
use rydopt::hamiltonian::{
    build_decomposition, ChannelMode, ControlDecomposition, DriftParams, Quadrature, TransitionSpec,
};
use rydopt::linalg::{CMatrix, CVector, C64};
use rydopt::register::{AtomRegister, LevelScheme, PairInteraction, Role};

pub const MHZ: f64 = 2.0 * PI;

pub fn basis(dim: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[i] = C64::from(1.0);
    v
}

pub fn random_state(dim: usize, rng: &mut impl Rng) -> CVector {
    let v = CVector::from_shape_fn(dim, |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / n)
}

pub fn random_hermitian(dim: usize, scale: f64, rng: &mut impl Rng) -> CMatrix {
    let a = CMatrix::from_shape_fn((dim, dim), |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let ah = a.t().mapv(|z| z.conj());
    (a + ah).mapv(|z| z * (0.5 * scale))
}

/// Qubit-Rydberg register with every atom driven on `1 → r` by one channel.
pub fn rydberg_register(n: usize, v: f64) -> AtomRegister {
    AtomRegister::new(
        n,
        LevelScheme::qubit_rydberg(),
        vec![Role::Target; n],
        None,
        PairInteraction::Uniform(v),
    )
    .unwrap()
}

pub fn drive_1r(reg: &AtomRegister, atoms: Vec<usize>, drift: &DriftParams) -> ControlDecomposition {
    let spec = TransitionSpec {
        atoms,
        from_level: "1".into(),
        to_level: "r".into(),
        channel: "Omega_r".into(),
    };
    build_decomposition(reg, &[(spec, ChannelMode::AmplitudeOnly)], drift).unwrap()
}

pub fn constant_field(channel: &str, grid: &TimeGrid, value: f64) -> ControlField {
    ControlField::new(channel, Quadrature::Re, vec![value; grid.n_steps()])
}
