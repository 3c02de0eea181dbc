use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) -> PyResult<()> {
    Python::initialize();
    Python::attach(|py| {
        let module = PyModule::new(py, "natgrad_py")?;
        natgrad_py::natgrad_py(&module)?;
        py.import("sys")?.getattr("modules")?.set_item("natgrad_py", &module)?;
        let globals = PyDict::new(py);
        py.run(&std::ffi::CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn module_exposes_core_operations() {
    run(r#"
import natgrad_py as ng
g = ng.Family("gaussian1d")
kl = ng.Similarity("kl")
assert abs(kl.evaluate(g, [1.0, 1.0], [0.0, 1.0]) - 0.5) < 1e-12
h = ng.local_hessian(g, "fisher", [0.0, 1.0])
assert abs(h[0][0] - 1.0) < 1e-12 and abs(h[1][1] - 2.0) < 1e-12
t = ng.optimize(g, kl, "fisher", [2.0, 3.0], [0.0, 1.0])
assert t["status"] == "converged_grad" and t["grad_norm"][-1] < 1e-8
s = ng.natural_gradient_step(g, kl, "newton", [0.01, 1.0], [0.0, 1.0])
assert abs(s["theta_next"][0]) < 1e-4
try:
    ng.local_hessian(g, "fishr", [0.0, 1.0])
    raise AssertionError("unknown metric accepted")
except ValueError as e:
    assert "euclidean" in str(e)
x, y = ng.generate_gp_data(1, 5, [0.0, 0.0, -1.0])
assert len(x) == 5 and len(ng.gp_nll_grad([0.0, 0.0, -1.0], x, y)) == 3
"#)
    .unwrap();
}
