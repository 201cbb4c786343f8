//! Generated trajectories: an equilibrium geometry plus quasi-periodic vibrations.
//!
//! Every Cartesian coordinate of every atom oscillates as the sum of two
//! sinusoids with incommensurate periods, random phases and a combined
//! amplitude of at most [`Vibration::amplitude`]. The motion is smooth and
//! deterministic given the seed, so it is learnable from a short window.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::graphdata::{Frame, Trajectory};
use crate::numerics::Rng;

const GOLDEN: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vibration {
    /// Upper bound on each coordinate's displacement, Å.
    pub amplitude: f64,
    /// Periods of the two superposed sinusoids, in frames.
    pub periods: [f64; 2],
    pub seed: u64,
}

impl Default for Vibration {
    fn default() -> Self {
        Vibration {
            amplitude: 0.3,
            periods: [12.0, 12.0 * GOLDEN],
            seed: 0,
        }
    }
}

/// Frames `0..frames` of the equilibrium geometry under `vibration`.
pub fn vibrate(
    elements: &[String],
    equilibrium: &[[f64; 3]],
    frames: usize,
    vibration: &Vibration,
) -> Result<Vec<Frame>> {
    if elements.len() != equilibrium.len() {
        return Err(Error::Dataset(format!(
            "{} element symbols for {} positions",
            elements.len(),
            equilibrium.len()
        )));
    }
    if !(vibration.amplitude >= 0.0) || vibration.periods.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Config(format!("invalid vibration {vibration:?}")));
    }
    let mut rng = Rng::new(vibration.seed);
    // Per coordinate: (a1, phase1, a2, phase2) with a1 + a2 = amplitude.
    let modes: Vec<[[f64; 4]; 3]> = equilibrium
        .iter()
        .map(|_| {
            std::array::from_fn(|_| {
                let share = rng.uniform(0.3, 0.7);
                [
                    vibration.amplitude * share,
                    rng.uniform(0.0, TAU),
                    vibration.amplitude * (1.0 - share),
                    rng.uniform(0.0, TAU),
                ]
            })
        })
        .collect();
    let [p1, p2] = vibration.periods;
    Ok((0..frames)
        .map(|t| {
            let t = t as f64;
            let positions = equilibrium
                .iter()
                .zip(&modes)
                .map(|(x0, m)| {
                    std::array::from_fn(|d| {
                        let [a1, f1, a2, f2] = m[d];
                        x0[d] + a1 * (TAU * t / p1 + f1).sin() + a2 * (TAU * t / p2 + f2).sin()
                    })
                })
                .collect();
            Frame {
                elements: elements.to_vec(),
                positions,
                index: t as usize,
            }
        })
        .collect())
}

/// Planar zig-zag backbone with 1.48 Å between neighbours.
pub fn zigzag(atoms: usize) -> Vec<[f64; 3]> {
    (0..atoms)
        .map(|k| [1.25 * k as f64, if k % 2 == 0 { 0.4 } else { -0.4 }, 0.0])
        .collect()
}

/// Carbon chain of `atoms` atoms.
pub fn chain_trajectory(atoms: usize, frames: usize, vibration: &Vibration) -> Result<Trajectory> {
    let elements = vec!["C".to_string(); atoms];
    let frames = vibrate(&elements, &zigzag(atoms), frames, vibration)?;
    Trajectory::from_frames(format!("chain{atoms}-seed{}", vibration.seed), frames)
}

/// A 19-atom C7O2H10 geometry: a nine-atom zig-zag backbone (C C O C C C O C C)
/// with one in-plane hydrogen on every carbon and an out-of-plane hydrogen on
/// three of them. Covalent bonds: 8 backbone + 10 C–H.
pub fn c7o2h10() -> (Vec<String>, Vec<[f64; 3]>) {
    let backbone = ["C", "C", "O", "C", "C", "C", "O", "C", "C"];
    let heavy = zigzag(backbone.len());
    let mut elements: Vec<String> = backbone.iter().map(|s| s.to_string()).collect();
    let mut positions = heavy.clone();
    const CH: f64 = 1.09;
    for (k, sym) in backbone.iter().enumerate() {
        if *sym != "C" {
            continue;
        }
        let [x, y, _] = heavy[k];
        elements.push("H".into());
        positions.push([x, y + CH * y.signum(), 0.0]);
    }
    for k in [0, 4, 8] {
        let [x, y, _] = heavy[k];
        elements.push("H".into());
        positions.push([x, y, CH]);
    }
    (elements, positions)
}

/// Vibrating C7O2H10 trajectory. Different seeds give different vibration
/// patterns around a geometry whose equilibrium is jittered by up to `jitter` Å
/// per coordinate (use 0 for the exact reference geometry).
pub fn c7o2h10_trajectory(frames: usize, vibration: &Vibration, jitter: f64) -> Result<Trajectory> {
    let (elements, mut positions) = c7o2h10();
    let mut rng = Rng::new(vibration.seed ^ 0x5EED_0F_1507);
    for p in &mut positions {
        for x in p.iter_mut() {
            *x += rng.uniform(-jitter, jitter);
        }
    }
    let frames = vibrate(&elements, &positions, frames, vibration)?;
    Trajectory::from_frames(format!("c7o2h10-seed{}", vibration.seed), frames)
}

/// Displacement small enough that no covalent bond of [`c7o2h10`] changes class.
pub const MOLECULE_AMPLITUDE: f64 = 0.03;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::classify_bonds;

    #[test]
    fn displacement_is_bounded_and_deterministic() {
        let v = Vibration {
            seed: 7,
            ..Vibration::default()
        };
        let a = chain_trajectory(5, 200, &v).unwrap();
        let b = chain_trajectory(5, 200, &v).unwrap();
        assert_eq!(a.frames, b.frames);
        let eq = zigzag(5);
        for f in &a.frames {
            for (p, q) in f.positions.iter().zip(&eq) {
                for d in 0..3 {
                    assert!((p[d] - q[d]).abs() <= v.amplitude + 1e-12);
                }
            }
        }
        let c = chain_trajectory(5, 200, &Vibration { seed: 8, ..v }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn molecule_has_expected_composition_and_bonds() {
        let (elements, positions) = c7o2h10();
        assert_eq!(positions.len(), 19);
        let count = |s: &str| elements.iter().filter(|e| *e == s).count();
        assert_eq!((count("C"), count("O"), count("H")), (7, 2, 10));
        let v = Vibration {
            amplitude: MOLECULE_AMPLITUDE,
            seed: 3,
            ..Vibration::default()
        };
        let traj = c7o2h10_trajectory(100, &v, 0.0).unwrap();
        for f in &traj.frames {
            assert_eq!(classify_bonds(f).unwrap().bonded_pairs(), 18);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let els = vec!["C".to_string()];
        assert!(vibrate(&els, &[], 3, &Vibration::default()).is_err());
        let v = Vibration {
            periods: [0.0, 1.0],
            ..Vibration::default()
        };
        assert!(vibrate(&els, &[[0.0; 3]], 3, &v).is_err());
    }
}
