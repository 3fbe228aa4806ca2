use edlab_core::contextuality::*;
use edlab_core::inference::{born_probabilities, max_abs_diff, HermitianOperator, StateVector};
use edlab_core::Error;
use nalgebra::DMatrix;
use num_complex::Complex;
use proptest::prelude::*;

type M = DMatrix<Complex<f64>>;

fn p(s: &str) -> PauliString {
    s.parse().unwrap()
}

/// Pauli matrices written out by hand, combined with an explicit Kronecker
/// loop rather than the library's builder.
fn dense(s: &PauliString) -> M {
    let z = Complex::new(0.0, 0.0);
    let o = Complex::new(1.0, 0.0);
    let i = Complex::new(0.0, 1.0);
    let single = |l: PauliLetter| -> [[Complex<f64>; 2]; 2] {
        match l {
            PauliLetter::I => [[o, z], [z, o]],
            PauliLetter::X => [[z, o], [o, z]],
            PauliLetter::Y => [[z, -i], [i, z]],
            PauliLetter::Z => [[o, z], [z, -o]],
        }
    };
    let n = s.n_qubits();
    let dim = 1 << n;
    let phase = [o, i, -o, -i][s.phase().power() as usize];
    M::from_fn(dim, dim, |r, c| {
        let mut v = phase;
        for (k, &l) in s.letters().iter().enumerate() {
            let bit = n - 1 - k;
            v *= single(l)[(r >> bit) & 1][(c >> bit) & 1];
        }
        v
    })
}

fn all_strings(n: usize) -> Vec<PauliString> {
    let letters = [
        PauliLetter::I,
        PauliLetter::X,
        PauliLetter::Y,
        PauliLetter::Z,
    ];
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|w: Vec<PauliLetter>| {
                letters.iter().map(move |&l| {
                    let mut w = w.clone();
                    w.push(l);
                    w
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|w| PauliString::new(Phase::PLUS_ONE, w).unwrap())
        .collect()
}

fn with_phase(s: &PauliString, ph: Phase) -> PauliString {
    PauliString::new(ph, s.letters().to_vec()).unwrap()
}

const PHASES: [Phase; 4] = [
    Phase::PLUS_ONE,
    Phase::PLUS_I,
    Phase::MINUS_ONE,
    Phase::MINUS_I,
];

#[test]
fn library_matrices_match_hand_written_ones() {
    for n in 1..=3 {
        for s in all_strings(n) {
            assert!(max_abs_diff(&to_matrix::<f64>(&s).unwrap(), &dense(&s)) < 1e-15);
        }
    }
}

#[test]
fn homomorphism_exhaustive_two_qubits() {
    let strings = all_strings(2);
    for a in &strings {
        for b in &strings {
            for &pa in &PHASES {
                for &pb in &PHASES {
                    let (a, b) = (with_phase(a, pa), with_phase(b, pb));
                    let product = pauli_mul(&a, &b).unwrap();
                    assert!(max_abs_diff(&dense(&product), &(dense(&a) * dense(&b))) < 1e-12);
                    let commutator = dense(&a) * dense(&b) - dense(&b) * dense(&a);
                    let zero = commutator.iter().all(|z| z.norm() < 1e-12);
                    assert_eq!(pauli_commutes(&a, &b).unwrap(), zero, "{a} {b}");
                }
            }
        }
    }
}

#[test]
fn homomorphism_three_qubit_sample() {
    let strings = all_strings(3);
    for a in strings.iter().step_by(5) {
        for b in strings.iter().step_by(7) {
            let product = pauli_mul(a, b).unwrap();
            assert!(max_abs_diff(&dense(&product), &(dense(a) * dense(b))) < 1e-12);
        }
    }
}

#[test]
fn mermin_rows_and_grand_product() {
    let r = context_products(&mermin_square()).unwrap();
    assert_eq!(r.products[0].product, p("II"));
    assert_eq!(r.products[2].product, p("-II"));
    assert_eq!(r.negative_contexts, vec![2]);
    assert_eq!(r.grand_product, p("-II"));
    assert_eq!(r.grand_sign, -1);
    // The same signs from dense matrix chains.
    let t = mermin_square();
    for (ctx, prod) in t.contexts().iter().zip(&r.products) {
        let chain = ctx
            .cells
            .iter()
            .fold(M::identity(4, 4), |acc, &(i, j)| acc * dense(t.entry(i, j)));
        let signed = M::identity(4, 4) * Complex::new(f64::from(prod.sign), 0.0);
        assert!(max_abs_diff(&chain, &signed) < 1e-12);
    }
}

/// Evaluates constraints column-major over the table, assignment by
/// assignment, without the library's bitmask shortcut.
fn brute_force(table: &ObservableTable) -> Vec<Vec<i8>> {
    let cells = table.n_cells();
    let signs: Vec<i8> = (0..table.contexts().len())
        .map(|i| table.context_product(i).unwrap().identity_sign().unwrap())
        .collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << cells) {
        let v: Vec<i8> = (0..cells)
            .map(|k| if mask & (1 << k) != 0 { -1 } else { 1 })
            .collect();
        let ok = table.contexts().iter().zip(&signs).rev().all(|(ctx, &s)| {
            ctx.cells
                .iter()
                .rev()
                .map(|&(r, c)| v[r * table.cols() + c])
                .product::<i8>()
                == s
        });
        if ok {
            out.push(v);
        }
    }
    out
}

#[test]
fn valuation_search_matches_brute_force() {
    let square = mermin_square();
    let tables = vec![
        square.clone(),
        square.without_context(2).unwrap(),
        square.without_context(4).unwrap(),
        parse_table("ZI IZ ZZ\n@contexts rows\n").unwrap(),
        parse_table("XI IX XX\nIZ ZI ZZ\n@contexts rows\n").unwrap(),
    ];
    for t in tables {
        let report = valuation_search(&t).unwrap();
        let mine: Vec<Vec<i8>> = report
            .satisfying
            .iter()
            .map(|v| v.values().to_vec())
            .collect();
        assert_eq!(mine, brute_force(&t));
        for v in &report.satisfying {
            assert!(v.satisfies(&t).unwrap());
        }
    }
}

#[test]
fn relaxations_match_searches_on_reduced_tables() {
    let square = mermin_square();
    let report = valuation_search(&square).unwrap();
    for (k, relax) in report.relaxations.iter().enumerate() {
        let reduced = valuation_search(&square.without_context(k).unwrap()).unwrap();
        assert_eq!(relax.satisfying as usize, reduced.n_satisfying());
        assert!(relax.satisfying >= 1);
    }
}

/// Mermin's star: ten 3-qubit observables on five lines of four.
fn mermin_star() -> ObservableTable {
    let text = "\
XXX XYY YXY YYX XII
IXI IIX YII IYI IIY
@context 0,0 0,1 0,2 0,3
@context 0,0 0,4 1,0 1,1
@context 0,1 0,4 1,3 1,4
@context 0,2 1,2 1,0 1,4
@context 0,3 1,2 1,3 1,1
";
    parse_table(text).unwrap()
}

#[test]
fn mermin_star_parity_proof() {
    let star = mermin_star();
    let products = context_products(&star).unwrap();
    assert_eq!(products.negative_contexts, vec![0]);
    let cert = parity_certificate(&star).unwrap();
    assert_eq!(cert.sign_product, -1);
    assert_eq!(cert.verdict, Verdict::Contradiction);
    assert_eq!(valuation_search(&star).unwrap().n_satisfying(), 0);
}

#[test]
fn hybrid_checks_on_every_basis_state() {
    let t = mermin_square();
    for x0 in 0..4 {
        let r = hybrid_check::<f64>(&t, x0).unwrap();
        assert!(r.squares_nonnegative && r.squares_product >= 0.0);
        for (s, &v) in t.entries().iter().zip(&r.cell_values) {
            assert_eq!(v, dense(s)[(x0, x0)].re);
            assert!(v == -1.0 || v == 0.0 || v == 1.0);
        }
        // Context products are ±II, so their diagonals are exactly ±1.
        let signs = context_products(&t).unwrap();
        for (c, s) in r.contexts.iter().zip(&signs.products) {
            assert_eq!(c.value, f64::from(s.sign));
        }
        assert_eq!(r.context_grand_product, f64::from(signs.grand_sign));
        assert!(r.relation_fails);
    }
    assert!(hybrid_check::<f64>(&t, 4).is_err());
}

fn projector(members: &[PauliString], signs: &[i8]) -> M {
    let dim = 1 << members[0].n_qubits();
    let id = M::identity(dim, dim);
    members.iter().zip(signs).fold(id.clone(), |acc, (m, &s)| {
        acc * ((&id + dense(m) * Complex::new(f64::from(s), 0.0)) * Complex::new(0.5, 0.0))
    })
}

fn expectation(psi: &[Complex<f64>], m: &M) -> f64 {
    let mut acc = Complex::new(0.0, 0.0);
    for i in 0..psi.len() {
        for j in 0..psi.len() {
            acc += psi[i].conj() * m[(i, j)] * psi[j];
        }
    }
    acc.re
}

#[test]
fn pipeline_on_joint_eigenstate_is_certain() {
    let t = mermin_square();
    let psi = StateVector::<f64>::basis(4, 0).unwrap();
    // |00⟩ is a joint eigenvector of column 1 {ZI, IZ, ZZ}.
    let r = context_selection_pipeline(&psi, &t, 3).unwrap();
    let certain: Vec<f64> = r
        .distribution
        .probabilities()
        .iter()
        .copied()
        .filter(|&q| q > 1e-12)
        .collect();
    assert_eq!(certain.len(), 1);
    assert!((certain[0] - 1.0).abs() < 1e-12);
}

#[test]
fn pipeline_on_bell_state_row_three() {
    let t = mermin_square();
    let s = 0.5f64.sqrt();
    let z = Complex::new(0.0, 0.0);
    let bell = StateVector::new(vec![Complex::new(s, 0.0), z, z, Complex::new(s, 0.0)]).unwrap();
    let r = context_selection_pipeline(&bell, &t, 2).unwrap();
    for (signs, &q) in r
        .joint_eigenvalues
        .iter()
        .zip(r.distribution.probabilities())
    {
        let oracle = expectation(bell.amplitudes(), &projector(&r.members, signs));
        assert!((q - oracle).abs() < 1e-12);
    }
    // ZZ = XX = +1 on this Bell state, YY = -1.
    let idx = r
        .joint_eigenvalues
        .iter()
        .position(|v| v == &vec![1, 1, -1])
        .unwrap();
    assert!((r.distribution.probabilities()[idx] - 1.0).abs() < 1e-12);
}

#[test]
fn non_commuting_context_is_rejected() {
    let t = mermin_square();
    let psi = StateVector::<f64>::basis(4, 0).unwrap();
    assert!(matches!(
        context_selection_pipeline(&psi, &t, 9),
        Err(Error::IndexOutOfRange { .. })
    ));
    assert!(matches!(
        parse_table("ZI XI\n@contexts rows\n"),
        Err(Error::NonCommutingContext { context: 0 })
    ));
}

/// Random valid parity-even table. Odd seeds give the square under per-qubit
/// cyclic relabeling X→Y→Z→X, an optional qubit swap and random cell signs.
/// Even seeds give a diagonal table closed under products.
fn random_parity_table(seed: u64) -> ObservableTable {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shifts = [rng.random_range(0..3u8), rng.random_range(0..3u8)];
    let swap = rng.random::<bool>();
    let cycle = |l: char, k: u8| {
        let order = ['X', 'Y', 'Z'];
        match order.iter().position(|&c| c == l) {
            Some(i) => order[(i + k as usize) % 3],
            None => l,
        }
    };
    if seed % 2 == 0 {
        let zs = ["II", "ZI", "IZ", "ZZ"];
        let mut grid: Vec<Vec<PauliString>> = (0..2)
            .map(|_| (0..2).map(|_| p(zs[rng.random_range(0..4)])).collect())
            .collect();
        for row in &mut grid {
            let last = pauli_mul(&row[0], &row[1]).unwrap();
            row.push(last);
        }
        let last: Vec<PauliString> = (0..3)
            .map(|c| pauli_mul(&grid[0][c], &grid[1][c]).unwrap())
            .collect();
        grid.push(last);
        for row in &mut grid {
            for e in row.iter_mut() {
                if rng.random::<bool>() {
                    *e = e.negated();
                }
            }
        }
        return ObservableTable::with_layout(grid, ContextLayout::RowsAndColumns).unwrap();
    }
    let square = mermin_square();
    let grid: Vec<Vec<PauliString>> = (0..3)
        .map(|r| {
            (0..3)
                .map(|c| {
                    let e = square.entry(r, c);
                    let mut w: Vec<char> = e.letters().iter().map(|l| l.as_char()).collect();
                    if swap {
                        w.swap(0, 1);
                    }
                    let w: String = w.iter().zip(shifts).map(|(&l, k)| cycle(l, k)).collect();
                    let negate = (e.phase() == Phase::MINUS_ONE) ^ rng.random::<bool>();
                    p(&format!("{}{w}", if negate { "-" } else { "" }))
                })
                .collect()
        })
        .collect();
    ObservableTable::with_layout(grid, ContextLayout::RowsAndColumns).unwrap()
}

#[test]
fn contradiction_certificate_implies_no_valuation() {
    let mut verdicts = [0; 2];
    for seed in 0..24 {
        let t = random_parity_table(seed);
        let cert = parity_certificate(&t).unwrap();
        let n = valuation_search(&t).unwrap().n_satisfying();
        let grand = context_products(&t).unwrap().grand_sign;
        assert_eq!(cert.sign_product, grand);
        if cert.verdict == Verdict::Contradiction {
            assert_eq!(n, 0);
            verdicts[0] += 1;
        } else {
            assert!(n > 0);
            verdicts[1] += 1;
        }
    }
    assert!(verdicts[0] >= 5 && verdicts[1] >= 5, "{verdicts:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pipeline_marginals_match_member_born_rules(seed in any::<u64>(), context in 0usize..6) {
        let t = mermin_square();
        let psi = StateVector::<f64>::random(4, seed).unwrap();
        let r = context_selection_pipeline(&psi, &t, context).unwrap();
        let total: f64 = r.distribution.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (signs, &q) in r.joint_eigenvalues.iter().zip(r.distribution.probabilities()) {
            let oracle = expectation(psi.amplitudes(), &projector(&r.members, signs));
            prop_assert!((q - oracle).abs() < 1e-12);
        }
        for (j, member) in r.members.iter().enumerate() {
            let op = HermitianOperator::new(dense(member)).unwrap();
            let born = born_probabilities(&psi, &op).unwrap();
            let plus: f64 = r.joint_eigenvalues.iter().zip(r.distribution.probabilities())
                .filter(|(v, _)| v[j] > 0).map(|(_, &q)| q).sum();
            let born_plus: f64 = born.labels().iter().zip(born.probabilities())
                .filter(|(l, _)| (**l - 1.0).abs() < 1e-9).map(|(_, &q)| q).sum();
            prop_assert!((born_plus - plus).abs() < 1e-12);
        }
    }

    #[test]
    fn products_are_associative(a in 0usize..64, b in 0usize..64, c in 0usize..64) {
        let s = all_strings(3);
        let (x, y, z) = (&s[a], &s[b], &s[c]);
        let left = pauli_mul(&pauli_mul(x, y).unwrap(), z).unwrap();
        let right = pauli_mul(x, &pauli_mul(y, z).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn display_parse_round_trip(k in 0usize..64, ph in 0usize..4) {
        let s = with_phase(&all_strings(3)[k], PHASES[ph]);
        prop_assert_eq!(s.to_string().parse::<PauliString>().unwrap(), s);
    }
}
