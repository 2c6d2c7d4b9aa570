//! Plot-ready data files for the photon-number, tomography, concurrence,
//! projection, and persistency results.

use crate::formats::OutputWriter;
use crate::pipeline::{
    AnalysisPayload, EvolutionPayload, HamiltonianPayload, ModulationPayload, PipelineArtifacts,
    PipelineError,
};

/// Which figure-data set to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureSet {
    Fig3,
    Fig4,
    Fig5,
    Table1,
    All,
}

impl FigureSet {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fig3" => Some(Self::Fig3),
            "fig4" => Some(Self::Fig4),
            "fig5" => Some(Self::Fig5),
            "table1" => Some(Self::Table1),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

/// (t, L(t)) columns plus the dense n(θ, t) matrix, row per time sample.
pub fn write_modulation_outputs(
    writer: &mut OutputWriter,
    payload: &ModulationPayload,
) -> Result<(), PipelineError> {
    writer.write_columns(
        "modulation_path_length",
        &["t_s", "path_length_m"],
        &[&payload.times, &payload.path_lengths],
    )?;
    writer.write_matrix("modulation_index_profiles", &payload.index_profiles)
}

/// The resonant-Hamiltonian document (always structured JSON).
pub fn write_hamiltonian_outputs(
    writer: &mut OutputWriter,
    payload: &HamiltonianPayload,
) -> Result<(), PipelineError> {
    writer.write_json("rwa_hamiltonian", payload)
}

fn photon_columns(mean_photons: &[Vec<f64>], n_modes: usize) -> Vec<Vec<f64>> {
    (0..n_modes)
        .map(|m| mean_photons.iter().map(|row| row[m]).collect())
        .collect()
}

/// Photon-number traces and final density snapshots for every run.
pub fn write_evolution_outputs(
    writer: &mut OutputWriter,
    payload: &EvolutionPayload,
) -> Result<(), PipelineError> {
    let n = payload.n_modes;
    let headers: Vec<String> = std::iter::once("t_s".to_string())
        .chain((0..n).map(|m| format!("mean_n{m}")))
        .collect();
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();

    let zero = &payload.zero_decay;
    let cols = photon_columns(&zero.mean_photons, n);
    let mut col_refs: Vec<&[f64]> = vec![&zero.times];
    col_refs.extend(cols.iter().map(Vec::as_slice));
    writer.write_columns("photon_numbers_zero_decay", &header_refs, &col_refs)?;
    writer.write_tomography("tomography_zero_decay", &zero.final_tomography)?;

    for damped in &payload.damped {
        let tag = format!("{:e}", damped.decay_rate_per_s).replace(['+', '.'], "_");
        let cols = photon_columns(&damped.mean_photons, n);
        let mut col_refs: Vec<&[f64]> = vec![&damped.times];
        col_refs.extend(cols.iter().map(Vec::as_slice));
        writer.write_columns(
            &format!("photon_numbers_decay_{tag}"),
            &header_refs,
            &col_refs,
        )?;
        writer.write_tomography(&format!("tomography_decay_{tag}"), &damped.final_tomography)?;
    }
    Ok(())
}

/// Concurrence trace columns: (t, C_N, pair values labeled by the kept pair).
pub fn write_concurrence_trace(
    writer: &mut OutputWriter,
    analysis: &AnalysisPayload,
    n_modes: usize,
    stem: &str,
) -> Result<(), PipelineError> {
    let trace = &analysis.concurrence;
    let mut headers = vec!["t_s".to_string(), format!("c{n_modes}")];
    // Reduced entry k traces out mode k; the column is named by the kept pair.
    for traced in 0..n_modes {
        let kept: Vec<String> = (0..n_modes)
            .filter(|&m| m != traced)
            .map(|m| m.to_string())
            .collect();
        headers.push(format!("c2_{}", kept.join("")));
    }
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut columns: Vec<Vec<f64>> = vec![trace.times.clone(), trace.full.clone()];
    for traced in 0..n_modes {
        columns.push(trace.reduced.iter().map(|row| row[traced]).collect());
    }
    let col_refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    writer.write_columns(stem, &header_refs, &col_refs)
}

/// Persistency table mirroring the measured-mode × photon-number layout.
pub fn write_persistency_table(
    writer: &mut OutputWriter,
    analysis: &AnalysisPayload,
    stem: &str,
) -> Result<(), PipelineError> {
    let table = &analysis.persistency;
    writer.write_json(stem, table)?;
    // Companion text table: value and probability per cell.
    let mut text = String::from("measured_mode");
    for j in 0..=table.max_fock {
        text.push_str(&format!(",c_n{j},p_n{j}"));
    }
    text.push('\n');
    for (row, &mode) in table.entries.iter().zip(&table.modes) {
        text.push_str(&mode.to_string());
        for cell in row {
            match cell {
                Some(c) => text.push_str(&format!(",{},{}", c.concurrence, c.probability)),
                None => text.push_str(",impossible,0"),
            }
        }
        text.push('\n');
    }
    writer.write_bytes(&format!("{stem}.csv"), text.as_bytes())
}

/// Projection outcomes (photon detected or not) with pair tomography.
pub fn write_projections(
    writer: &mut OutputWriter,
    analysis: &AnalysisPayload,
    stem: &str,
) -> Result<(), PipelineError> {
    writer.write_json(stem, &analysis.projections)?;
    for p in &analysis.projections {
        writer.write_tomography(
            &format!("{stem}_mode{}_{}_pair", p.mode, p.kind),
            &p.pair_tomography,
        )?;
    }
    Ok(())
}

/// Write the requested figure-data set from a finished artifact collection.
pub fn export_figures(
    writer: &mut OutputWriter,
    artifacts: &PipelineArtifacts,
    which: FigureSet,
) -> Result<(), PipelineError> {
    let n_modes = artifacts.evolution.n_modes;
    if matches!(which, FigureSet::Fig3 | FigureSet::All) {
        write_evolution_outputs(writer, &artifacts.evolution)?;
    }
    if matches!(which, FigureSet::Fig4 | FigureSet::All) {
        write_concurrence_trace(writer, &artifacts.analysis, n_modes, "fig4_concurrence")?;
    }
    if matches!(which, FigureSet::Fig5 | FigureSet::All) {
        write_projections(writer, &artifacts.analysis, "fig5_projections")?;
    }
    if matches!(which, FigureSet::Table1 | FigureSet::All) {
        write_persistency_table(writer, &artifacts.analysis, "table1_persistency")?;
    }
    Ok(())
}
