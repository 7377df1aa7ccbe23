use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module(code: &str) {
    Python::attach(|py| {
        let m = PyModule::new(py, "cfpi_py").unwrap();
        cfpi_py::cfpi_py(&m).unwrap();
        py.import("sys").unwrap().getattr("modules").unwrap().set_item("cfpi_py", m).unwrap();
        let globals = PyDict::new(py);
        py.run(&CString::new("import cfpi_py, json").unwrap(), Some(&globals), None).unwrap();
        if let Err(e) = py.run(&CString::new(code).unwrap(), Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn state_round_trip() {
    with_module(
        r#"
x = cfpi_py.ImuState(q=[0.1, -0.2, 0.05, 1.0], p=[1, 2, 3], v=[0.5, 0, 0])
d = [1e-3, -2e-3, 5e-4] + [0.0] * 9 + [0.1, 0.2, 0.3]
y = x.boxplus(d)
back = y.boxminus(x)
assert max(abs(a - b) for a, b in zip(back, d)) < 1e-8, back
assert abs(sum(c * c for c in x.q) - 1.0) < 1e-12
"#,
    );
}

#[test]
fn bad_inputs_raise_value_error() {
    with_module(
        r#"
for call in (
    lambda: cfpi_py.ImuState(p=[1, 2]),
    lambda: cfpi_py.ImuState().boxplus([0.0] * 14),
    lambda: cfpi_py.preintegrate("m3", [0.0, 0.01], [[0, 0, 0]] * 2, [[0, 0, 9.81]] * 2, 0.0, 0.01),
    lambda: cfpi_py.preintegrate("m1", [0.0, 0.0], [[0, 0, 0]] * 2, [[0, 0, 9.81]] * 2, 0.0, 0.01),
    lambda: cfpi_py.run_benchmark('{"runs": 0}'),
    lambda: cfpi_py.run_benchmark('{"bogus": 1}'),
):
    try:
        call()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
"#,
    );
}

#[test]
fn stationary_preintegration_predicts_rest() {
    with_module(
        r#"
n = 11
t = [0.01 * i for i in range(n)]
pm = cfpi_py.preintegrate("m2", t, [[0, 0, 0]] * n, [[0, 0, 9.81]] * n, 0.0, 0.1)
assert pm.model == "m2" and abs(pm.dt - 0.1) < 1e-12
cov = pm.covariance
assert len(cov) == 15 and all(abs(cov[i][j] - cov[j][i]) < 1e-15 for i in range(15) for j in range(15))
assert len(pm.bias_jacobian("hb")) == 3
x1 = pm.predict(cfpi_py.ImuState(p=[1, 2, 3]))
assert max(abs(a - b) for a, b in zip(x1.p, [1, 2, 3])) < 1e-12, x1.p
assert max(abs(a) for a in x1.v) < 1e-12
"#,
    );
}

#[test]
fn benchmark_and_oracle() {
    with_module(
        r#"
cfg = json.loads(cfpi_py.default_config())
cfg["trajectory"]["duration"] = 1.0
cfg["runs"] = 1
text = json.dumps(cfg)
summary = json.loads(cfpi_py.run_benchmark(text))
assert set(summary) == {"m1", "m2", "discrete"}
assert summary["m1"]["diverged_runs"] == 0
truth = cfpi_py.simulate_truth(text)
steps = cfpi_py.estimate(text, "m1")
assert len(steps) == len(truth) and steps[0][0] == truth[0][0]
checks = cfpi_py.run_oracle(True)
assert all(ok for _, _, ok in checks), [c for c in checks if not c[2]]
"#,
    );
}
