//! CSV helpers shared by the commands.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use odflow::strata::io::read_strata;
use odflow::strata::StrataSpace;

use crate::error::{CliError, CliResult};
use crate::run::Run;

/// Strata CSV as a space with same-gender pairs masked (no mask when
/// genders are unspecified).
pub fn read_space(run: &mut Run, path: &Path) -> CliResult<Arc<StrataSpace>> {
    let bytes = run.read_input(path)?;
    let strata = read_strata(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Arc::new(StrataSpace::with_gender_mask(strata).map_err(CliError::input)?))
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
