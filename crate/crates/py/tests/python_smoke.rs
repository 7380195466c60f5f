use std::ffi::CString;

use pyo3::prelude::*;
use pymeterfill::pymeterfill as module;

/// Runs python/smoke_test.py against the module registered in an embedded
/// interpreter.
#[test]
fn python_smoke_script() {
    pyo3::append_to_inittab!(module);
    Python::initialize();
    let script = CString::new(include_str!("../python/smoke_test.py")).unwrap();
    Python::attach(|py| {
        if let Err(e) = py.run(&script, None, None) {
            e.print(py);
            panic!("smoke script failed");
        }
    });
}
