//! Runs the Python smoke script against the bindings in an embedded interpreter.

use std::ffi::CString;

use inclusion_mediator::inclusion_mediator;

use pyo3::prelude::*;

#[test]
fn python_smoke_script_passes() {
    pyo3::append_to_inittab!(inclusion_mediator);
    Python::initialize();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py");
    let source = std::fs::read_to_string(path).unwrap();
    Python::attach(|py| {
        let code = CString::new(source).unwrap();
        let module = PyModule::from_code(py, &code, c"smoke_test.py", c"smoke_test")
            .unwrap_or_else(|e| panic!("{}", describe(py, e)));
        module
            .getattr("main")
            .and_then(|f| f.call0())
            .unwrap_or_else(|e| panic!("{}", describe(py, e)));
    });
}

fn describe(py: Python<'_>, e: PyErr) -> String {
    let tb = e
        .traceback(py)
        .and_then(|t| t.format().ok())
        .unwrap_or_default();
    format!("{tb}{e}")
}
