//! `odflow summarize`: quantile tables of flows and derived functionals.

use std::path::Path;

use odflow::inference::{summarize, write_table, Functional, PosteriorDraws};
use odflow::strata::io::read_mapping;
use odflow::strata::StrataMapping;

use crate::error::{CliError, CliResult};
use crate::run::Run;
use crate::tables::read_space;

pub fn parse_functional(s: &str) -> Result<Functional, String> {
    Functional::ALL
        .into_iter()
        .find(|f| f.name() == s || f.name().replace('_', "-") == s)
        .ok_or_else(|| format!("unknown functional `{s}` (expected flows, sources, recipients, ratios or age_gap)"))
}

pub fn cmd_summarize(
    draws_file: &Path,
    strata_file: &Path,
    mapping_file: Option<&Path>,
    functionals: &[Functional],
    out: &Path,
) -> CliResult<()> {
    let mut run = Run::new("summarize", out)?;
    let space = read_space(&mut run, strata_file)?;
    let bytes = run.read_input(draws_file)?;
    let draws = PosteriorDraws::read_csv(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", draws_file.display())))?;
    let mapping = match mapping_file {
        Some(p) => {
            let bytes = run.read_input(p)?;
            let assignment = read_mapping(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            Some(StrataMapping::new(space.clone(), &assignment).map_err(CliError::input)?)
        }
        None => None,
    };
    let chosen: Vec<Functional> = if functionals.is_empty() { Functional::ALL.to_vec() } else { functionals.to_vec() };
    for f in chosen {
        let rows = summarize(&draws, &space, f, mapping.as_ref()).map_err(CliError::input)?;
        let flagged = rows.iter().filter(|r| r.flagged).count();
        if flagged > 0 {
            run.warn("undefined", format!("{}: {flagged} quantities undefined on most draws", f.name()));
        }
        run.write(&format!("{}.csv", f.name()), |w| write_table(&rows, w).map_err(CliError::runtime))?;
    }
    run.finish()
}
