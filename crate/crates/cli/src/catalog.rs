//! Text printed by `edlab list`.

use crate::config::Kind;

struct Entry {
    kind: Kind,
    summary: &'static str,
    exercises: &'static str,
    params: &'static [&'static str],
    artifacts: &'static str,
}

const ENTRIES: &[Entry] = &[
    Entry {
        kind: Kind::Sample,
        summary: "Monte Carlo moments of the maximum-entropy transition kernel",
        exercises: "Gaussian kernel with drift (eta dt / m) grad phi and variance eta dt / m per axis",
        params: &[
            "masses = [f64, ...]            one per particle",
            "eta = f64                      default 1",
            "dt = f64",
            "drift = { kind = \"constant\" | \"linear\" (slope) | \"quadratic\" (curvature, center) }",
            "start = [f64; 3N]",
            "n_samples = usize              default 100000, at least 100",
            "ensemble = { size, steps, axis = 0, bins = 50, range = [lo, hi] }   optional",
        ],
        artifacts: "moments.json, histogram.csv",
    },
    Entry {
        kind: Kind::Evolve,
        summary: "coupled (rho, Phi) Hamilton flow on a periodic grid",
        exercises: "continuity and Hamilton-Jacobi equations generated by the ensemble Hamiltonian",
        params: &[
            "grid = { x_min, x_max, n }     n a power of two, at least 8",
            "mass = f64                     default 1",
            "hbar = f64 | xi = f64          hbar = sqrt(8 xi), default hbar = 1",
            "potential = { kind = \"free\" | \"harmonic\" (omega, center) | \"values\" (values) }",
            "initial = { center = 0, sigma, momentum = 0 }   Gaussian packet",
            "t_final = f64",
            "step_fraction = f64            dt = fraction * m dx^2 / hbar, default 0.01, at most 0.25",
            "outputs = usize                snapshots after t = 0, default 10",
        ],
        artifacts: "snapshot_NNN.csv, energy.csv, evolve.json",
    },
    Entry {
        kind: Kind::Compare,
        summary: "(rho, Phi) flow against a split-step Schrödinger reference",
        exercises: "equivalence of the entropic field equations with the Schrödinger equation",
        params: &["same block as evolve"],
        artifacts: "comparison.csv, compare.json",
    },
    Entry {
        kind: Kind::Measure,
        summary: "pointer device, position detections and Bayesian inference of an observable",
        exercises: "Born rule from position detection through a unitary pointer device",
        params: &[
            "state = { amplitudes = [[re, im], ...] | random_dim = usize, seed }",
            "operator = { pauli = \"XZ\" | matrix = [[[re, im], ...], ...] | diagonal = [f64, ...] }",
            "cell_positions = { x0 = f64, x1 = f64, ... }   default x_i = i",
            "detector = { sigma = 0, edges = [f64, ...] }    sigma = 0 gives sharp detection",
            "detections = [usize, ...] | n_detections = usize",
        ],
        artifacts: "measure.json",
    },
    Entry {
        kind: Kind::Weak,
        summary: "weak value of an observable between pre- and post-selected states",
        exercises: "weak values lying outside the eigenvalue spectrum",
        params: &[
            "pre = { amplitudes | random_dim, seed }",
            "post = { amplitudes | random_dim, seed }",
            "operator = { pauli | matrix | diagonal }",
        ],
        artifacts: "weak.json",
    },
    Entry {
        kind: Kind::Ks,
        summary: "noncontextual valuation search on a Pauli observable table",
        exercises: "parity contradiction of the Peres-Mermin square (Kochen-Specker)",
        params: &[
            "table = \"mermin\" | table_text = \"...\" | table_file = path   default mermin",
        ],
        artifacts: "ks.json",
    },
    Entry {
        kind: Kind::Hybrid,
        summary: "position valuations v(A) = <x0|A|x0> tested against context relations",
        exercises: "position is noncontextual while other observables are not",
        params: &[
            "table = \"mermin\" | table_text | table_file",
            "x0 = [usize, ...]              default every basis state",
        ],
        artifacts: "hybrid.json",
    },
    Entry {
        kind: Kind::Context,
        summary: "context-selection pipeline: one pointer device per commuting context",
        exercises: "context-dependent outcomes inferred from position detection",
        params: &[
            "table = \"mermin\" | table_text | table_file",
            "state = { amplitudes | random_dim, seed }   default random of the table dimension",
            "contexts = [usize, ...]        default every context",
        ],
        artifacts: "context.json",
    },
];

pub fn catalog() -> String {
    let mut out = String::from(
        "Scenario kinds. Every config sets `kind`, optional `seed`, `output_dir` and `label`,\n\
         and one parameter block named after the kind.\n",
    );
    for kind in Kind::ALL {
        let e = ENTRIES
            .iter()
            .find(|e| e.kind == kind)
            .expect("every kind is catalogued");
        out.push_str(&format!(
            "\n{}\n  {}\n  exercises: {}\n  [{}]\n",
            kind, e.summary, e.exercises, kind
        ));
        for p in e.params {
            out.push_str(&format!("    {p}\n"));
        }
        out.push_str(&format!("  artifacts: {}\n", e.artifacts));
    }
    out
}
