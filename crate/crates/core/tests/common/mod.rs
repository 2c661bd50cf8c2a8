//! Test-only helpers: a dense state-vector oracle that shares no code with
//! the simulator backend, plus small topology builders.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Duration;

use num_complex::Complex64;
use qnetsim_core::backend::{Backend, Gate, Qubit, QubitKey};
use qnetsim_core::config::TopologyConfig;
use qnetsim_core::{ConnectionKind, Host, Network};
use rand::Rng;

pub type C = Complex64;

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Dense `2^n x 2^n` matrix, row major.
pub struct Dense {
    pub dim: usize,
    pub m: Vec<C>,
}

impl Dense {
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![c(0.0, 0.0); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = c(1.0, 0.0);
        }
        Dense { dim, m }
    }

    pub fn mul(&self, other: &Dense) -> Dense {
        let n = self.dim;
        let mut m = vec![c(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.m[i * n + k];
                if a == c(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    m[i * n + j] += a * other.m[k * n + j];
                }
            }
        }
        Dense { dim: n, m }
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        let n = self.dim;
        (0..n).map(|i| (0..n).map(|j| self.m[i * n + j] * v[j]).sum()).collect()
    }
}

/// Oracle copy of the named one-qubit gates, written out independently.
pub fn oracle_1q(g: &Gate) -> [[C; 2]; 2] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    match g {
        Gate::I => [[l, o], [o, l]],
        Gate::X => [[o, l], [l, o]],
        Gate::Y => [[o, c(0.0, -1.0)], [c(0.0, 1.0), o]],
        Gate::Z => [[l, o], [o, c(-1.0, 0.0)]],
        Gate::H => [[c(r, 0.0), c(r, 0.0)], [c(r, 0.0), c(-r, 0.0)]],
        Gate::S => [[l, o], [o, c(0.0, 1.0)]],
        Gate::T => [[l, o], [o, c(r, r)]],
        Gate::Rx(t) => [
            [c((t / 2.0).cos(), 0.0), c(0.0, -(t / 2.0).sin())],
            [c(0.0, -(t / 2.0).sin()), c((t / 2.0).cos(), 0.0)],
        ],
        Gate::Ry(t) => [
            [c((t / 2.0).cos(), 0.0), c(-(t / 2.0).sin(), 0.0)],
            [c((t / 2.0).sin(), 0.0), c((t / 2.0).cos(), 0.0)],
        ],
        Gate::Rz(t) => [
            [c((t / 2.0).cos(), -(t / 2.0).sin()), o],
            [o, c((t / 2.0).cos(), (t / 2.0).sin())],
        ],
        Gate::Custom1(m) => *m,
        other => panic!("{other:?} is not a one-qubit gate"),
    }
}

/// Oracle copy of the two-qubit gates on `|control target>`.
pub fn oracle_2q(g: &Gate) -> [[C; 4]; 4] {
    let o = c(0.0, 0.0);
    let l = c(1.0, 0.0);
    match g {
        Gate::Cnot => [[l, o, o, o], [o, l, o, o], [o, o, o, l], [o, o, l, o]],
        Gate::Cz => [[l, o, o, o], [o, l, o, o], [o, o, l, o], [o, o, o, -l]],
        Gate::Custom2(m) => *m,
        other => panic!("{other:?} is not a two-qubit gate"),
    }
}

/// Full-space operator of a one-qubit gate on qubit `q` of `n`
/// (qubit `i` is bit `i` of the basis index).
pub fn lift_1q(n: usize, q: usize, u: &[[C; 2]; 2]) -> Dense {
    let dim = 1 << n;
    let mut m = vec![c(0.0, 0.0); dim * dim];
    for row in 0..dim {
        for col in 0..dim {
            if (row ^ col) & !(1 << q) != 0 {
                continue;
            }
            m[row * dim + col] = u[(row >> q) & 1][(col >> q) & 1];
        }
    }
    Dense { dim, m }
}

/// Full-space operator of a two-qubit gate with `a` the first operand.
pub fn lift_2q(n: usize, a: usize, b: usize, u: &[[C; 4]; 4]) -> Dense {
    let dim = 1 << n;
    let mask = (1 << a) | (1 << b);
    let mut m = vec![c(0.0, 0.0); dim * dim];
    for row in 0..dim {
        for col in 0..dim {
            if (row ^ col) & !mask != 0 {
                continue;
            }
            let r = (((row >> a) & 1) << 1) | ((row >> b) & 1);
            let k = (((col >> a) & 1) << 1) | ((col >> b) & 1);
            m[row * dim + col] = u[r][k];
        }
    }
    Dense { dim, m }
}

/// Haar-ish random unitary by Gram-Schmidt on a complex Gaussian-like matrix.
pub fn random_unitary<const N: usize>(rng: &mut impl Rng) -> [[C; N]; N] {
    let mut cols: Vec<Vec<C>> = Vec::with_capacity(N);
    while cols.len() < N {
        let mut v: Vec<C> = (0..N).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        for u in &cols {
            let proj: C = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    let mut m = [[c(0.0, 0.0); N]; N];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..N {
            m[i][j] = col[i];
        }
    }
    m
}

pub fn random_gate_1q(rng: &mut impl Rng) -> Gate {
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    match rng.gen_range(0..11) {
        0 => Gate::I,
        1 => Gate::X,
        2 => Gate::Y,
        3 => Gate::Z,
        4 => Gate::H,
        5 => Gate::S,
        6 => Gate::T,
        7 => Gate::Rx(theta),
        8 => Gate::Ry(theta),
        9 => Gate::Rz(theta),
        _ => Gate::custom_1q(random_unitary::<2>(rng)).expect("unitary"),
    }
}

pub fn random_gate_2q(rng: &mut impl Rng) -> Gate {
    match rng.gen_range(0..3) {
        0 => Gate::Cnot,
        1 => Gate::Cz,
        _ => Gate::custom_2q(random_unitary::<4>(rng)).expect("unitary"),
    }
}

/// One step of a random circuit.
#[derive(Debug, Clone)]
pub enum Step {
    One(usize, Gate),
    Two(usize, usize, Gate),
}

pub fn random_circuit(rng: &mut impl Rng, n: usize, len: usize) -> Vec<Step> {
    (0..len)
        .map(|_| {
            if n >= 2 && rng.gen_bool(0.4) {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                Step::Two(a, b, random_gate_2q(rng))
            } else {
                Step::One(rng.gen_range(0..n), random_gate_1q(rng))
            }
        })
        .collect()
}

/// Final state of `circuit` on `|0...0>` as the product of the lifted
/// gate matrices.
pub fn oracle_state(n: usize, circuit: &[Step]) -> Vec<C> {
    let mut u = Dense::identity(1 << n);
    for step in circuit {
        let g = match step {
            Step::One(q, g) => lift_1q(n, *q, &oracle_1q(g)),
            Step::Two(a, b, g) => lift_2q(n, *a, *b, &oracle_2q(g)),
        };
        u = g.mul(&u);
    }
    let mut v = vec![c(0.0, 0.0); 1 << n];
    v[0] = c(1.0, 0.0);
    u.apply(&v)
}

/// Joint state of `qubits` (qubit `i` at bit `i`) assembled from the
/// backend's registers, which may be split across several products.
pub fn backend_state(backend: &Backend, qubits: &[Qubit]) -> Vec<C> {
    let snaps: Vec<_> = qubits.iter().map(|q| backend.inspect_state(q).expect("live qubit")).collect();
    let n = qubits.len();
    // Group qubits by register: one representative snapshot per register.
    let mut groups: BTreeMap<Vec<QubitKey>, Vec<usize>> = BTreeMap::new();
    for (i, s) in snaps.iter().enumerate() {
        groups.entry(s.keys.clone()).or_default().push(i);
    }
    let mut out = vec![c(0.0, 0.0); 1 << n];
    for (x, amp) in out.iter_mut().enumerate() {
        let mut a = c(1.0, 0.0);
        for members in groups.values() {
            let snap = &snaps[members[0]];
            assert_eq!(snap.keys.len(), members.len(), "register holds qubits outside the circuit");
            let mut idx = 0usize;
            for &q in members {
                let pos = snap.position(&qubits[q]).expect("member");
                idx |= ((x >> q) & 1) << pos;
            }
            a *= snap.amplitudes[idx];
        }
        *amp = a;
    }
    out
}

pub fn max_diff(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `Ry(theta)` then `Rz(phi)` on `|0>`.
pub fn bloch_state(theta: f64, phi: f64) -> [C; 2] {
    let v = [c(1.0, 0.0), c(0.0, 0.0)];
    let ry = oracle_1q(&Gate::Ry(theta));
    let rz = oracle_1q(&Gate::Rz(phi));
    let w = [ry[0][0] * v[0] + ry[0][1] * v[1], ry[1][0] * v[0] + ry[1][1] * v[1]];
    [rz[0][0] * w[0] + rz[0][1] * w[1], rz[1][0] * w[0] + rz[1][1] * w[1]]
}

/// Overlap of the two-qubit register holding `a` and `b` with Φ+,
/// computed from raw amplitudes.
pub fn phi_plus_fidelity(backend: &Backend, a: &Qubit, b: &Qubit) -> f64 {
    let snap = backend.inspect_state(a).expect("live");
    assert_eq!(snap.keys.len(), 2, "pair register must hold exactly the pair");
    let pa = snap.position(a).expect("a");
    let pb = snap.position(b).expect("b in same register");
    let both = (1 << pa) | (1 << pb);
    let overlap = (snap.amplitudes[0] + snap.amplitudes[both]) * std::f64::consts::FRAC_1_SQRT_2;
    overlap.norm_sqr()
}

/// A line of `n` hosts `H0 - H1 - ...` with both link kinds.
pub fn line(n: usize, seed: u64) -> (Network, BTreeMap<String, Host>, Vec<String>) {
    let names: Vec<String> = (0..n).map(|i| format!("H{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut cfg = TopologyConfig::new(&refs);
    for w in refs.windows(2) {
        cfg = cfg.link(w[0], w[1], ConnectionKind::Both, true);
    }
    let (net, hosts) = cfg.build(seed).expect("line topology builds");
    (net, hosts, names)
}

pub const WAIT: Duration = Duration::from_secs(10);
