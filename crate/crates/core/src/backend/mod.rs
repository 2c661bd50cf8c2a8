//! State-vector qubit backend.
//!
//! Qubits live in entangling registers ([`StateRegister`]); a two-qubit gate
//! across registers first merges them by tensor product. Registers are never
//! split back into product factors. All measurement randomness is drawn from
//! per-host substreams of one seeded generator so that a host's sequence of
//! outcomes does not depend on how other hosts are scheduled.

mod gate;
mod register;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

#[cfg(any(test, feature = "diagnostics"))]
use num_complex::Complex64;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use gate::{Gate, Matrix2, Matrix4};
pub use register::StateRegister;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QubitError {
    #[error("qubit is no longer live")]
    InvalidQubit,
    #[error("two-qubit gate needs two distinct qubits")]
    SameQubit,
    #[error("qubit id {0:?} is already live under this owner")]
    DuplicateQubitId(String),
    #[error("gate arity does not match the supplied operands")]
    ArityMismatch,
    #[error("matrix is not unitary")]
    NotUnitary,
    #[error("cannot build a GHZ state over zero qubits")]
    EmptyGhz,
}

/// Backend-internal identity of a qubit. Distinct from the user-facing
/// qubit id, which EPR and GHZ partners share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QubitKey(pub(crate) u64);

impl fmt::Display for QubitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct RegisterId(u64);

#[derive(Debug)]
struct QubitMeta {
    register: RegisterId,
    owner: String,
    id: String,
}

/// Named substreams derived from the simulation seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    /// Born-rule draws for measurements performed at a host.
    Measurement,
    /// Protocol-level choices (random bits, bases) made by a host.
    Protocol,
    /// Qubit identifiers.
    Ids,
    /// Draws for discarded (released) qubits.
    Release,
}

impl StreamKind {
    fn tag(self) -> &'static str {
        match self {
            StreamKind::Measurement => "measure",
            StreamKind::Protocol => "protocol",
            StreamKind::Ids => "ids",
            StreamKind::Release => "release",
        }
    }
}

/// 64-bit FNV-1a, used to map (kind, name) to a ChaCha stream number.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent generator for `(seed, kind, name)`.
pub fn substream(seed: u64, kind: StreamKind, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = format!("{}:{}", kind.tag(), name);
    rng.set_stream(fnv1a(label.as_bytes()));
    rng
}

struct State {
    registers: HashMap<RegisterId, StateRegister>,
    qubits: HashMap<QubitKey, QubitMeta>,
    next_key: u64,
    next_register: u64,
    streams: HashMap<String, ChaCha8Rng>,
    release_rng: ChaCha8Rng,
    epr_created: u64,
    ghz_created: u64,
}

struct Inner {
    seed: u64,
    state: Mutex<State>,
}

/// Shared handle to the simulated qubit system.
///
/// Every operation takes one internal lock, so gates and measurements on the
/// same register are serialized and callers never observe a half-applied gate.
#[derive(Clone)]
pub struct Backend {
    inner: Arc<Inner>,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend").field("seed", &self.inner.seed).finish()
    }
}

impl Backend {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Arc::new(Inner {
                seed,
                state: Mutex::new(State {
                    registers: HashMap::new(),
                    qubits: HashMap::new(),
                    next_key: 0,
                    next_register: 0,
                    streams: HashMap::new(),
                    release_rng: substream(seed, StreamKind::Release, ""),
                    epr_created: 0,
                    ghz_created: 0,
                }),
            }),
        }
    }

    pub fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// A fresh `|0>` qubit in its own register.
    pub fn create_qubit(&self, owner: &str, qubit_id: &str) -> Result<Qubit, QubitError> {
        let mut st = self.inner.state.lock();
        if st.qubits.values().any(|m| m.owner == owner && m.id == qubit_id) {
            return Err(QubitError::DuplicateQubitId(qubit_id.to_string()));
        }
        let key = st.alloc(owner, qubit_id);
        Ok(Qubit::wrap(self.clone(), key, qubit_id))
    }

    /// A Φ+ pair `(|00> + |11>)/√2` with both halves carrying `qubit_id`.
    pub fn make_epr(&self, owner_a: &str, owner_b: &str, qubit_id: &str) -> (Qubit, Qubit) {
        let mut qs = self.ghz_inner(&[owner_a, owner_b], qubit_id);
        let b = qs.pop().expect("two halves");
        let a = qs.pop().expect("two halves");
        self.inner.state.lock().epr_created += 1;
        (a, b)
    }

    /// `(|0..0> + |1..1>)/√2` over one qubit per owner, built as H on the
    /// first qubit followed by a CNOT chain.
    pub fn make_ghz(&self, owners: &[&str], qubit_id: &str) -> Result<Vec<Qubit>, QubitError> {
        if owners.is_empty() {
            return Err(QubitError::EmptyGhz);
        }
        let qs = self.ghz_inner(owners, qubit_id);
        self.inner.state.lock().ghz_created += 1;
        Ok(qs)
    }

    fn ghz_inner(&self, owners: &[&str], qubit_id: &str) -> Vec<Qubit> {
        let mut st = self.inner.state.lock();
        let keys: Vec<QubitKey> = owners.iter().map(|o| st.alloc(o, qubit_id)).collect();
        let h = Gate::H.matrix_1q().expect("1q");
        let cnot = Gate::Cnot.matrix_2q().expect("2q");
        st.apply_1q(keys[0], &h).expect("fresh qubit");
        for pair in keys.windows(2) {
            st.apply_2q(pair[0], pair[1], &cnot).expect("fresh qubits");
        }
        drop(st);
        keys.into_iter()
            .map(|k| Qubit::wrap(self.clone(), k, qubit_id))
            .collect()
    }

    pub fn apply_gate(&self, q: &Qubit, gate: &Gate, target: Option<&Qubit>) -> Result<(), QubitError> {
        let mut st = self.inner.state.lock();
        match (gate.arity(), target) {
            (1, None) => st.apply_1q(q.key, &gate.matrix_1q().expect("1q gate")),
            (2, Some(t)) => {
                if t.key == q.key {
                    return Err(QubitError::SameQubit);
                }
                st.apply_2q(q.key, t.key, &gate.matrix_2q().expect("2q gate"))
            }
            _ => Err(QubitError::ArityMismatch),
        }
    }

    fn measure_key(&self, key: QubitKey, non_destructive: bool) -> Result<u8, QubitError> {
        let mut st = self.inner.state.lock();
        let owner = st.qubits.get(&key).ok_or(QubitError::InvalidQubit)?.owner.clone();
        let seed = self.inner.seed;
        let u: f64 = st
            .streams
            .entry(owner.clone())
            .or_insert_with(|| substream(seed, StreamKind::Measurement, &owner))
            .gen();
        st.measure(key, u, non_destructive)
    }

    fn release_key(&self, key: QubitKey) {
        let mut st = self.inner.state.lock();
        if st.qubits.contains_key(&key) {
            let u: f64 = st.release_rng.gen();
            let _ = st.measure(key, u, false);
        }
    }

    fn is_live(&self, key: QubitKey) -> bool {
        self.inner.state.lock().qubits.contains_key(&key)
    }

    fn set_meta(&self, key: QubitKey, owner: Option<&str>, id: Option<&str>) -> Result<(), QubitError> {
        let mut st = self.inner.state.lock();
        let meta = st.qubits.get_mut(&key).ok_or(QubitError::InvalidQubit)?;
        if let Some(o) = owner {
            meta.owner = o.to_string();
        }
        if let Some(i) = id {
            meta.id = i.to_string();
        }
        Ok(())
    }

    fn owner_of(&self, key: QubitKey) -> Option<String> {
        self.inner.state.lock().qubits.get(&key).map(|m| m.owner.clone())
    }

    /// Number of registers holding at least one live qubit.
    pub fn live_register_count(&self) -> usize {
        self.inner.state.lock().registers.len()
    }

    pub fn live_qubit_count(&self) -> usize {
        self.inner.state.lock().qubits.len()
    }

    /// How many EPR pairs have been created so far.
    pub fn epr_created(&self) -> u64 {
        self.inner.state.lock().epr_created
    }

    pub fn ghz_created(&self) -> u64 {
        self.inner.state.lock().ghz_created
    }

    /// Copy of the register containing `q`: qubit keys in tensor order and
    /// the amplitude vector (little-endian, see [`StateRegister`]).
    #[cfg(any(test, feature = "diagnostics"))]
    pub fn inspect_state(&self, q: &Qubit) -> Result<StateSnapshot, QubitError> {
        let st = self.inner.state.lock();
        let meta = st.qubits.get(&q.key).ok_or(QubitError::InvalidQubit)?;
        let reg = &st.registers[&meta.register];
        Ok(StateSnapshot {
            keys: reg.order().to_vec(),
            ids: reg.order().iter().map(|k| st.qubits[k].id.clone()).collect(),
            amplitudes: reg.amplitudes().to_vec(),
        })
    }
}

impl State {
    fn alloc(&mut self, owner: &str, id: &str) -> QubitKey {
        let key = QubitKey(self.next_key);
        self.next_key += 1;
        let reg = RegisterId(self.next_register);
        self.next_register += 1;
        self.registers.insert(reg, StateRegister::fresh(key));
        self.qubits.insert(
            key,
            QubitMeta {
                register: reg,
                owner: owner.to_string(),
                id: id.to_string(),
            },
        );
        key
    }

    fn locate(&self, key: QubitKey) -> Result<(RegisterId, usize), QubitError> {
        let meta = self.qubits.get(&key).ok_or(QubitError::InvalidQubit)?;
        let pos = self.registers[&meta.register]
            .position(key)
            .expect("qubit index and register disagree");
        Ok((meta.register, pos))
    }

    fn apply_1q(&mut self, key: QubitKey, m: &Matrix2) -> Result<(), QubitError> {
        let (rid, pos) = self.locate(key)?;
        self.registers.get_mut(&rid).expect("live register").apply_1q(pos, m);
        Ok(())
    }

    fn apply_2q(&mut self, a: QubitKey, b: QubitKey, m: &Matrix4) -> Result<(), QubitError> {
        let (ra, _) = self.locate(a)?;
        let (rb, _) = self.locate(b)?;
        if ra != rb {
            let other = self.registers.remove(&rb).expect("live register");
            let base = self.registers.remove(&ra).expect("live register");
            for k in other.order() {
                self.qubits.get_mut(k).expect("indexed qubit").register = ra;
            }
            self.registers.insert(ra, base.merge(other));
        }
        let reg = self.registers.get_mut(&ra).expect("live register");
        let pa = reg.position(a).expect("merged");
        let pb = reg.position(b).expect("merged");
        reg.apply_2q(pa, pb, m);
        Ok(())
    }

    fn measure(&mut self, key: QubitKey, u: f64, non_destructive: bool) -> Result<u8, QubitError> {
        let (rid, pos) = self.locate(key)?;
        let reg = self.registers.get_mut(&rid).expect("live register");
        let outcome = reg.measure(pos, u);
        if !non_destructive {
            reg.remove(pos, outcome);
            if reg.is_empty() {
                self.registers.remove(&rid);
            }
            self.qubits.remove(&key);
        }
        Ok(outcome)
    }
}

/// Register contents returned by [`Backend::inspect_state`].
#[cfg(any(test, feature = "diagnostics"))]
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub keys: Vec<QubitKey>,
    pub ids: Vec<String>,
    pub amplitudes: Vec<Complex64>,
}

#[cfg(any(test, feature = "diagnostics"))]
impl StateSnapshot {
    pub fn position(&self, q: &Qubit) -> Option<usize> {
        self.keys.iter().position(|k| *k == q.key())
    }

    /// Fidelity `|<target|ψ_sub>|^2` where `qubits` are exactly the members
    /// of this register, listed in the order `target` is written in
    /// (first listed qubit is the most significant bit of `target`).
    pub fn fidelity_with(&self, qubits: &[&Qubit], target: &[Complex64]) -> Option<f64> {
        if qubits.len() != self.keys.len() || target.len() != self.amplitudes.len() {
            return None;
        }
        let n = qubits.len();
        let positions: Vec<usize> = qubits.iter().map(|q| self.position(q)).collect::<Option<_>>()?;
        let mut overlap = Complex64::new(0.0, 0.0);
        for (t_idx, t) in target.iter().enumerate() {
            let mut idx = 0usize;
            for (slot, pos) in positions.iter().enumerate() {
                let bit = (t_idx >> (n - 1 - slot)) & 1;
                idx |= bit << pos;
            }
            overlap += t.conj() * self.amplitudes[idx];
        }
        Some(overlap.norm_sqr())
    }

    /// Reduced single-qubit state of `q` as a 2x2 density matrix.
    pub fn reduced_density(&self, q: &Qubit) -> Option<[[Complex64; 2]; 2]> {
        let pos = self.position(q)?;
        let bit = 1usize << pos;
        let mut rho = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, a) in self.amplitudes.iter().enumerate() {
            if i & bit != 0 {
                continue;
            }
            let b = self.amplitudes[i | bit];
            rho[0][0] += a * a.conj();
            rho[0][1] += a * b.conj();
            rho[1][0] += b * a.conj();
            rho[1][1] += b * b.conj();
        }
        Some(rho)
    }
}

/// Owned handle to one simulated qubit.
///
/// Dropping a live handle releases the qubit (destructive measurement with
/// the result discarded), so qubits cannot leak out of the backend.
pub struct Qubit {
    backend: Backend,
    key: QubitKey,
    id: String,
}

impl fmt::Debug for Qubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Qubit").field("key", &self.key).field("id", &self.id).finish()
    }
}

impl Qubit {
    fn wrap(backend: Backend, key: QubitKey, id: &str) -> Self {
        Self {
            backend,
            key,
            id: id.to_string(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn key(&self) -> QubitKey {
        self.key
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Host currently holding this qubit, if it is still live.
    pub fn owner(&self) -> Option<String> {
        self.backend.owner_of(self.key)
    }

    pub fn is_live(&self) -> bool {
        self.backend.is_live(self.key)
    }

    pub(crate) fn set_owner(&self, owner: &str) -> Result<(), QubitError> {
        self.backend.set_meta(self.key, Some(owner), None)
    }

    pub(crate) fn set_id(&mut self, id: &str) -> Result<(), QubitError> {
        self.backend.set_meta(self.key, None, Some(id))?;
        self.id = id.to_string();
        Ok(())
    }

    pub fn apply(&self, gate: &Gate) -> Result<(), QubitError> {
        self.backend.apply_gate(self, gate, None)
    }

    pub fn apply2(&self, gate: &Gate, target: &Qubit) -> Result<(), QubitError> {
        self.backend.apply_gate(self, gate, Some(target))
    }

    pub fn h(&self) -> Result<(), QubitError> {
        self.apply(&Gate::H)
    }

    pub fn x(&self) -> Result<(), QubitError> {
        self.apply(&Gate::X)
    }

    pub fn y(&self) -> Result<(), QubitError> {
        self.apply(&Gate::Y)
    }

    pub fn z(&self) -> Result<(), QubitError> {
        self.apply(&Gate::Z)
    }

    pub fn cnot(&self, target: &Qubit) -> Result<(), QubitError> {
        self.apply2(&Gate::Cnot, target)
    }

    pub fn cz(&self, target: &Qubit) -> Result<(), QubitError> {
        self.apply2(&Gate::Cz, target)
    }

    /// Destructive computational-basis measurement.
    pub fn measure(self) -> Result<u8, QubitError> {
        self.backend.measure_key(self.key, false)
    }

    /// Measures and collapses, leaving the qubit usable.
    pub fn measure_non_destructive(&self) -> Result<u8, QubitError> {
        self.backend.measure_key(self.key, true)
    }

    /// Removes the qubit from the simulation. Releasing a dead qubit is a no-op.
    pub fn release(self) {
        drop(self)
    }
}

impl Drop for Qubit {
    fn drop(&mut self) {
        self.backend.release_key(self.key);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    fn snapshot_re(b: &Backend, q: &Qubit) -> Vec<f64> {
        b.inspect_state(q).unwrap().amplitudes.iter().map(|a| a.re).collect()
    }

    #[test]
    fn fresh_qubit_is_zero() {
        let b = Backend::new(1);
        let q = b.create_qubit("Alice", "q7").unwrap();
        assert_eq!(q.id(), "q7");
        let snap = b.inspect_state(&q).unwrap();
        assert_eq!(snap.ids, vec!["q7".to_string()]);
        assert_eq!(snap.amplitudes, vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_eq!(q.measure().unwrap(), 0);
    }

    #[test]
    fn duplicate_explicit_id_rejected() {
        let b = Backend::new(1);
        let _q = b.create_qubit("Alice", "q1").unwrap();
        assert_eq!(
            b.create_qubit("Alice", "q1").unwrap_err(),
            QubitError::DuplicateQubitId("q1".into())
        );
        assert!(b.create_qubit("Bob", "q1").is_ok());
    }

    #[test]
    fn hadamard_on_zero() {
        let b = Backend::new(1);
        let q = b.create_qubit("A", "a").unwrap();
        q.h().unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = snapshot_re(&b, &q);
        assert!((amps[0] - s).abs() < TOL && (amps[1] - s).abs() < TOL);
    }

    #[test]
    fn plus_then_z_then_h_reads_one() {
        let b = Backend::new(3);
        for _ in 0..50 {
            let q = b.create_qubit("A", "a").unwrap();
            q.h().unwrap();
            q.z().unwrap();
            q.h().unwrap();
            assert_eq!(q.measure().unwrap(), 1);
        }
    }

    #[test]
    fn one_always_measures_one() {
        let b = Backend::new(5);
        for _ in 0..50 {
            let q = b.create_qubit("A", "a").unwrap();
            q.x().unwrap();
            assert_eq!(q.measure().unwrap(), 1);
        }
    }

    #[test]
    fn bell_halves_agree() {
        let b = Backend::new(9);
        for _ in 0..200 {
            let (x, y) = b.make_epr("A", "B", "e");
            assert_eq!(x.id(), y.id());
            assert_eq!(x.measure().unwrap(), y.measure().unwrap());
        }
        assert_eq!(b.live_register_count(), 0);
        assert_eq!(b.epr_created(), 200);
    }

    #[test]
    fn bell_halves_agree_in_x_basis() {
        let b = Backend::new(10);
        for _ in 0..200 {
            let (x, y) = b.make_epr("A", "B", "e");
            x.h().unwrap();
            y.h().unwrap();
            assert_eq!(x.measure().unwrap(), y.measure().unwrap());
        }
    }

    #[test]
    fn non_destructive_measurement_is_idempotent() {
        let b = Backend::new(11);
        for _ in 0..100 {
            let q = b.create_qubit("A", "a").unwrap();
            q.h().unwrap();
            let first = q.measure_non_destructive().unwrap();
            assert!(q.is_live());
            assert_eq!(q.measure_non_destructive().unwrap(), first);
        }
    }

    #[test]
    fn release_collapses_partner() {
        let b = Backend::new(12);
        let (x, y) = b.make_epr("A", "B", "e");
        assert_eq!(b.live_register_count(), 1);
        x.release();
        let amps = b.inspect_state(&y).unwrap().amplitudes;
        let p0 = amps[0].norm_sqr();
        assert!((p0 - 1.0).abs() < TOL || p0.abs() < TOL);
    }

    #[test]
    fn release_reduces_register_count() {
        let b = Backend::new(1);
        let q = b.create_qubit("A", "a").unwrap();
        let _r = b.create_qubit("A", "b").unwrap();
        assert_eq!(b.live_register_count(), 2);
        q.release();
        assert_eq!(b.live_register_count(), 1);
    }

    #[test]
    fn same_qubit_rejected() {
        let b = Backend::new(1);
        let q = b.create_qubit("A", "a").unwrap();
        assert_eq!(q.cnot(&q), Err(QubitError::SameQubit));
        assert_eq!(b.apply_gate(&q, &Gate::H, Some(&q)), Err(QubitError::ArityMismatch));
    }

    #[test]
    fn dead_handle_is_invalid() {
        let b = Backend::new(1);
        let q = b.create_qubit("A", "a").unwrap();
        // A second handle to the same key, as the Python layer can hold.
        let alias = Qubit::wrap(b.clone(), q.key(), "a");
        q.release();
        assert_eq!(alias.h(), Err(QubitError::InvalidQubit));
        assert_eq!(alias.measure_non_destructive(), Err(QubitError::InvalidQubit));
    }

    #[test]
    fn ghz_single_is_plus() {
        let b = Backend::new(1);
        let qs = b.make_ghz(&["A"], "g").unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = snapshot_re(&b, &qs[0]);
        assert!((amps[0] - s).abs() < TOL && (amps[1] - s).abs() < TOL);
        assert_eq!(b.make_ghz(&[], "g").unwrap_err(), QubitError::EmptyGhz);
    }

    #[test]
    fn same_seed_same_outcomes() {
        let run = |seed| {
            let b = Backend::new(seed);
            (0..64)
                .map(|_| {
                    let q = b.create_qubit("A", "a").unwrap();
                    q.h().unwrap();
                    q.measure().unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn host_streams_are_independent() {
        // Interleaving another host's draws must not change A's outcomes.
        let seq_a = |interleave: bool| {
            let b = Backend::new(7);
            let mut out = Vec::new();
            for _ in 0..32 {
                if interleave {
                    let other = b.create_qubit("B", "b").unwrap();
                    other.h().unwrap();
                    other.measure().unwrap();
                }
                let q = b.create_qubit("A", "a").unwrap();
                q.h().unwrap();
                out.push(q.measure().unwrap());
            }
            out
        };
        assert_eq!(seq_a(false), seq_a(true));
    }
}
