//! Normal-incidence transfer-matrix solver for planar stacks.
//!
//! Each medium carries a forward and a backward plane wave,
//! `E(z) = A e^{ikz} + B e^{-ikz}` with `z` measured from the start of the
//! medium. The solver fixes the exit medium to `(A, B) = (1, 0)` and walks the
//! interface and propagation matrices back to the incidence medium, then
//! rescales everything to a unit incident amplitude. The amplitudes inside
//! every layer fall out of the same pass, which is what the intra-layer
//! intensity factor needs.
//!
//! The intensity factor `F(λ)` is the thickness average of `|E(z)|²` inside
//! one layer for a unit-amplitude wave arriving from one side. It models the
//! Fabry-Perot buildup of the vacuum field that seeds down-conversion: a
//! zero-contrast stack gives `F ≡ 1`, a high-index film gives fringes periodic
//! in `1/λ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dispersion::{MaterialLibrary, MaterialModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub material: MaterialModel,
    pub thickness_nm: f64,
}

/// Which semi-infinite medium the probing wave comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Incidence {
    #[default]
    Superstrate,
    Substrate,
}

/// Layered sample between a semi-infinite superstrate and a substrate chain.
///
/// `layers` are the films of interest (the nonlinear film lives here);
/// `substrate_chain` are finite supporting layers below them, terminated by
/// the semi-infinite `substrate`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    superstrate: MaterialModel,
    layers: Vec<Layer>,
    substrate_chain: Vec<Layer>,
    substrate: MaterialModel,
    nonlinear_layer_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackResponse {
    pub r: Complex64,
    pub t: Complex64,
    pub reflectance: f64,
    pub transmittance: f64,
}

impl LayerStack {
    pub fn new(
        superstrate: MaterialModel,
        layers: Vec<Layer>,
        substrate_chain: Vec<Layer>,
        substrate: MaterialModel,
        nonlinear_layer_index: usize,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "a stack needs at least one layer"));
        }
        if nonlinear_layer_index >= layers.len() {
            return Err(Error::config(
                "nonlinear_layer",
                format!("index {nonlinear_layer_index} but only {} layers", layers.len()),
            ));
        }
        for (i, layer) in layers.iter().chain(&substrate_chain).enumerate() {
            if !(layer.thickness_nm.is_finite() && layer.thickness_nm > 0.0) {
                return Err(Error::config(
                    format!("layers[{i}].thickness_nm"),
                    format!("thickness must be > 0, got {}", layer.thickness_nm),
                ));
            }
        }
        Ok(Self {
            superstrate,
            layers,
            substrate_chain,
            substrate,
            nonlinear_layer_index,
        })
    }

    /// Single film between two semi-infinite media.
    pub fn single_film(
        superstrate: MaterialModel,
        film: MaterialModel,
        thickness_nm: f64,
        substrate: MaterialModel,
    ) -> Result<Self> {
        Self::new(
            superstrate,
            vec![Layer {
                material: film,
                thickness_nm,
            }],
            Vec::new(),
            substrate,
            0,
        )
    }

    pub fn superstrate(&self) -> &MaterialModel {
        &self.superstrate
    }

    pub fn substrate(&self) -> &MaterialModel {
        &self.substrate
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn substrate_chain(&self) -> &[Layer] {
        &self.substrate_chain
    }

    pub fn nonlinear_layer_index(&self) -> usize {
        self.nonlinear_layer_index
    }

    pub fn nonlinear_layer(&self) -> &Layer {
        &self.layers[self.nonlinear_layer_index]
    }

    /// Copy of the stack with the nonlinear film thickness replaced.
    pub fn with_nonlinear_thickness(&self, thickness_nm: f64) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers[self.nonlinear_layer_index].thickness_nm = thickness_nm;
        Self::new(
            self.superstrate.clone(),
            layers,
            self.substrate_chain.clone(),
            self.substrate.clone(),
            self.nonlinear_layer_index,
        )
    }

    /// Stack with superstrate and substrate sides exchanged (layer order reversed).
    pub fn reversed(&self) -> Self {
        let mut finite: Vec<Layer> = self.finite_layers().cloned().collect();
        finite.reverse();
        let nonlinear = finite.len() - 1 - self.nonlinear_layer_index;
        Self {
            superstrate: self.substrate.clone(),
            layers: finite,
            substrate_chain: Vec::new(),
            substrate: self.superstrate.clone(),
            nonlinear_layer_index: nonlinear,
        }
    }

    fn finite_layers(&self) -> impl Iterator<Item = &Layer> {
        self.layers.iter().chain(&self.substrate_chain)
    }

    /// Every material in the stack, incidence medium first.
    pub fn materials(&self) -> impl Iterator<Item = &MaterialModel> {
        std::iter::once(&self.superstrate)
            .chain(self.finite_layers().map(|l| &l.material))
            .chain(std::iter::once(&self.substrate))
    }

    /// Intersection of all material valid ranges.
    pub fn valid_range_nm(&self) -> (f64, f64) {
        self.materials().fold((0.0f64, f64::INFINITY), |(lo, hi), m| {
            let (a, b) = m.valid_range_nm();
            (lo.max(a), hi.min(b))
        })
    }

    /// Media indices (incidence medium first) and finite-layer thicknesses.
    pub fn optical_profile(&self, lambda_nm: f64) -> Result<(Vec<Complex64>, Vec<f64>)> {
        let indices = self
            .materials()
            .map(|m| m.refractive_index(lambda_nm).map(|n| Complex64::new(n, 0.0)))
            .collect::<Result<Vec<_>>>()?;
        let thicknesses = self.finite_layers().map(|l| l.thickness_nm).collect();
        Ok((indices, thicknesses))
    }
}

/// Forward/backward amplitudes of a solved stack, normalised to a unit
/// incident wave. `layer_amplitudes[j]` are taken at the entry face of
/// finite layer `j` (counted from the incidence side).
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub r: Complex64,
    pub t: Complex64,
    pub layer_amplitudes: Vec<(Complex64, Complex64)>,
    wavenumbers: Vec<Complex64>,
    thicknesses: Vec<f64>,
    n_in: Complex64,
    n_out: Complex64,
}

impl FieldSolution {
    pub fn reflectance(&self) -> f64 {
        self.r.norm_sqr()
    }

    pub fn transmittance(&self) -> f64 {
        self.n_out.re / self.n_in.re * self.t.norm_sqr()
    }

    /// Thickness-averaged |E|² inside finite layer `j`.
    pub fn mean_intensity(&self, j: usize) -> f64 {
        let (a, b) = self.layer_amplitudes[j];
        let k = self.wavenumbers[j];
        let d = self.thicknesses[j];
        let i = Complex64::i();
        // |a e^{ikz} + b e^{-ikz}|² integrates term by term
        let forward = a.norm_sqr() * mean_exp(-2.0 * k.im * Complex64::new(1.0, 0.0), d).re;
        let backward = b.norm_sqr() * mean_exp(2.0 * k.im * Complex64::new(1.0, 0.0), d).re;
        let cross = 2.0 * (a * b.conj() * mean_exp(2.0 * i * k.re, d)).re;
        forward + backward + cross
    }

    /// Field at depth `z` inside finite layer `j`.
    pub fn field(&self, j: usize, z_nm: f64) -> Complex64 {
        let (a, b) = self.layer_amplitudes[j];
        let phase = Complex64::i() * self.wavenumbers[j] * z_nm;
        a * phase.exp() + b * (-phase).exp()
    }
}

/// Mean of e^{y z} over z in [0, d].
fn mean_exp(y: Complex64, d: f64) -> Complex64 {
    let x = y * d;
    if x.norm() < 1e-6 {
        Complex64::new(1.0, 0.0) + x / 2.0 + x * x / 6.0
    } else {
        (x.exp() - 1.0) / x
    }
}

/// Solves a stack given media indices (incidence medium first, exit medium
/// last) and the thicknesses of the finite layers in between.
pub fn solve_profile(indices: &[Complex64], thicknesses: &[f64], lambda_nm: f64) -> FieldSolution {
    assert_eq!(indices.len(), thicknesses.len() + 2, "need two semi-infinite media");
    let k0 = 2.0 * PI / lambda_nm;
    let wavenumbers: Vec<Complex64> = indices[1..indices.len() - 1].iter().map(|n| n * k0).collect();

    let mut amps = vec![(Complex64::default(), Complex64::default()); thicknesses.len()];
    // exit medium: only a forward wave
    let mut v = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    for m in (0..indices.len() - 1).rev() {
        let (n1, n2) = (indices[m], indices[m + 1]);
        let sum = (n1 + n2) / (2.0 * n1);
        let diff = (n1 - n2) / (2.0 * n1);
        // amplitudes at the exit face of medium m
        v = (sum * v.0 + diff * v.1, diff * v.0 + sum * v.1);
        if m > 0 {
            let j = m - 1;
            let phase = Complex64::i() * wavenumbers[j] * thicknesses[j];
            v = (v.0 * (-phase).exp(), v.1 * phase.exp());
            amps[j] = v;
        }
    }
    let incident = v.0;
    for a in &mut amps {
        *a = (a.0 / incident, a.1 / incident);
    }
    FieldSolution {
        r: v.1 / incident,
        t: Complex64::new(1.0, 0.0) / incident,
        layer_amplitudes: amps,
        wavenumbers,
        thicknesses: thicknesses.to_vec(),
        n_in: indices[0],
        n_out: indices[indices.len() - 1],
    }
}

fn solve(stack: &LayerStack, lambda_nm: f64, side: Incidence) -> Result<FieldSolution> {
    let (mut indices, mut thicknesses) = stack.optical_profile(lambda_nm)?;
    if side == Incidence::Substrate {
        indices.reverse();
        thicknesses.reverse();
    }
    Ok(solve_profile(&indices, &thicknesses, lambda_nm))
}

/// Reflection/transmission of the stack for a wave from the superstrate.
pub fn stack_response(stack: &LayerStack, lambda_nm: f64) -> Result<StackResponse> {
    let sol = solve(stack, lambda_nm, Incidence::Superstrate)?;
    Ok(StackResponse {
        r: sol.r,
        t: sol.t,
        reflectance: sol.reflectance(),
        transmittance: sol.transmittance(),
    })
}

/// Thickness-averaged intensity buildup in `layers[layer_index]` for a unit
/// wave incident from the superstrate.
pub fn internal_intensity_factor(stack: &LayerStack, layer_index: usize, lambda_nm: f64) -> Result<f64> {
    internal_intensity_factor_from(stack, layer_index, lambda_nm, Incidence::Superstrate)
}

pub fn internal_intensity_factor_from(
    stack: &LayerStack,
    layer_index: usize,
    lambda_nm: f64,
    side: Incidence,
) -> Result<f64> {
    if layer_index >= stack.layers.len() {
        return Err(Error::config(
            "layer_index",
            format!("index {layer_index} but only {} layers", stack.layers.len()),
        ));
    }
    let sol = solve(stack, lambda_nm, side)?;
    let finite = stack.layers.len() + stack.substrate_chain.len();
    let j = match side {
        Incidence::Superstrate => layer_index,
        Incidence::Substrate => finite - 1 - layer_index,
    };
    Ok(sol.mean_intensity(j))
}

/// Serializable stack description referencing materials by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub superstrate: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub substrate_chain: Vec<LayerSpec>,
    pub substrate: String,
    #[serde(default)]
    pub nonlinear_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub material: String,
    pub thickness_nm: f64,
}

impl StackSpec {
    pub fn build(&self, library: &MaterialLibrary) -> Result<LayerStack> {
        let layer = |l: &LayerSpec| -> Result<Layer> {
            Ok(Layer {
                material: library.get(&l.material)?.clone(),
                thickness_nm: l.thickness_nm,
            })
        };
        LayerStack::new(
            library.get(&self.superstrate)?.clone(),
            self.layers.iter().map(layer).collect::<Result<_>>()?,
            self.substrate_chain.iter().map(layer).collect::<Result<_>>()?,
            library.get(&self.substrate)?.clone(),
            self.nonlinear_layer,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(n: f64) -> MaterialModel {
        MaterialModel::constant(format!("n{n}"), n, (100.0, 10_000.0)).unwrap()
    }

    #[test]
    fn zero_contrast_is_transparent() {
        let stack = LayerStack::new(
            constant(1.7),
            vec![
                Layer { material: constant(1.7), thickness_nm: 123.0 },
                Layer { material: constant(1.7), thickness_nm: 777.0 },
            ],
            vec![Layer { material: constant(1.7), thickness_nm: 5000.0 }],
            constant(1.7),
            1,
        )
        .unwrap();
        for lambda in [400.0, 1030.0, 2500.0] {
            let resp = stack_response(&stack, lambda).unwrap();
            assert!(resp.r.norm() < 1e-15);
            assert!((resp.transmittance - 1.0).abs() < 1e-12);
            let f = internal_intensity_factor(&stack, 1, lambda).unwrap();
            assert!((f - 1.0).abs() < 1e-12, "{f}");
        }
    }

    #[test]
    fn thin_layer_gives_fresnel_interface() {
        let stack = LayerStack::single_film(constant(1.0), constant(3.0), 0.01, constant(3.0)).unwrap();
        let resp = stack_response(&stack, 1000.0).unwrap();
        assert!((resp.reflectance - 0.25).abs() < 1e-9, "{}", resp.reflectance);
    }

    #[test]
    fn quarter_wave_antireflection() {
        // n_film = sqrt(n_sub), d = λ/(4 n_film) → R = 0
        let n_sub: f64 = 2.25;
        let n_film = n_sub.sqrt();
        let stack =
            LayerStack::single_film(constant(1.0), constant(n_film), 1000.0 / (4.0 * n_film), constant(n_sub))
                .unwrap();
        assert!(stack_response(&stack, 1000.0).unwrap().reflectance < 1e-20);
    }

    #[test]
    fn mean_intensity_matches_sampled_field() {
        let stack = LayerStack::single_film(constant(1.0), constant(3.1), 400.0, constant(1.45)).unwrap();
        let sol = solve(&stack, 1111.0, Incidence::Superstrate).unwrap();
        let n = 200_000;
        let avg: f64 = (0..n)
            .map(|i| sol.field(0, 400.0 * (i as f64 + 0.5) / n as f64).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((avg - sol.mean_intensity(0)).abs() < 1e-9);
    }

    #[test]
    fn field_is_continuous_across_interfaces() {
        let stack = LayerStack::new(
            constant(1.0),
            vec![Layer { material: constant(3.1), thickness_nm: 400.0 }],
            vec![Layer { material: constant(1.45), thickness_nm: 4000.0 }],
            constant(1.76),
            0,
        )
        .unwrap();
        let sol = solve(&stack, 987.0, Incidence::Superstrate).unwrap();
        // superstrate side: 1 + r equals field at entry of layer 0
        assert!((Complex64::new(1.0, 0.0) + sol.r - sol.field(0, 0.0)).norm() < 1e-12);
        assert!((sol.field(0, 400.0) - sol.field(1, 0.0)).norm() < 1e-12);
        assert!((sol.field(1, 4000.0) - sol.t).norm() < 1e-12);
    }

    #[test]
    fn rejects_invalid_stacks() {
        assert!(LayerStack::new(constant(1.0), vec![], vec![], constant(1.5), 0).is_err());
        assert!(LayerStack::single_film(constant(1.0), constant(2.0), 0.0, constant(1.5)).is_err());
        let s = LayerStack::single_film(constant(1.0), constant(2.0), 10.0, constant(1.5)).unwrap();
        assert!(internal_intensity_factor(&s, 1, 1000.0).is_err());
        assert!(LayerStack::new(
            constant(1.0),
            vec![Layer { material: constant(2.0), thickness_nm: 1.0 }],
            vec![],
            constant(1.5),
            3
        )
        .is_err());
    }

    #[test]
    fn range_errors_propagate() {
        let narrow = MaterialModel::constant("narrow", 2.0, (500.0, 600.0)).unwrap();
        let s = LayerStack::single_film(constant(1.0), narrow, 10.0, constant(1.5)).unwrap();
        assert!(matches!(stack_response(&s, 1000.0), Err(Error::Range { .. })));
    }
}
