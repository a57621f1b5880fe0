use pyo3::prelude::*;

#[pymodule]
fn desens_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
