use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{CampaignReport, CorpusRecord, PhaseStats};
use crate::error::CampaignError;

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFiles {
    pub coverage_csv: PathBuf,
    pub crashes_json: PathBuf,
    pub symbolic_json: PathBuf,
    pub summary_txt: PathBuf,
    pub corpus_index: PathBuf,
}

#[derive(Serialize)]
struct IndexRow<'a> {
    file: String,
    #[serde(flatten)]
    record: &'a CorpusRecord,
}

#[derive(Serialize)]
struct SymbolicFile<'a> {
    phases: &'a [PhaseStats],
    symbolic_inputs: Vec<usize>,
    validation_discards: usize,
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CampaignError> {
    fs::write(path, data).map_err(|e| CampaignError::io(path, e))
}

fn json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes every report artifact below `out`. Output is a pure function of
/// the report, so re-emitting gives byte-identical files.
pub fn emit_report(report: &CampaignReport, out: &Path) -> Result<ReportFiles, CampaignError> {
    let corpus_dir = out.join("corpus");
    let crash_dir = out.join("crashes");
    for d in [out, &corpus_dir, &crash_dir] {
        fs::create_dir_all(d).map_err(|e| CampaignError::io(d, e))?;
    }

    let mut csv = String::from("iteration,edges,phase\n");
    for p in &report.coverage_curve {
        let _ = writeln!(csv, "{},{},{}", p.iteration, p.edges, p.phase.name());
    }
    let files = ReportFiles {
        coverage_csv: out.join("coverage.csv"),
        crashes_json: out.join("crashes.json"),
        symbolic_json: out.join("symbolic.json"),
        summary_txt: out.join("summary.txt"),
        corpus_index: corpus_dir.join("index.json"),
    };
    write(&files.coverage_csv, csv)?;
    write(&files.crashes_json, json(&report.crashes))?;
    for (n, c) in report.crashes.iter().enumerate() {
        write(&crash_dir.join(format!("crash-{n}.bin")), &c.bytes)?;
    }

    let symbolic_inputs = report
        .corpus
        .iter()
        .filter(|c| c.origin == crate::fuzz::Origin::Symbolic)
        .map(|c| c.id)
        .collect();
    let sym = SymbolicFile {
        phases: &report.symbolic_phases,
        symbolic_inputs,
        validation_discards: report.validation_discards(),
    };
    write(&files.symbolic_json, json(&sym))?;

    let mut index = Vec::new();
    for c in &report.corpus {
        write(&corpus_dir.join(c.file_name()), &c.bytes)?;
        index.push(IndexRow {
            file: c.file_name(),
            record: c,
        });
    }
    write(&files.corpus_index, json(&index))?;
    write(&out.join("config.txt"), report.config.to_text())?;
    write(&files.summary_txt, summary(report))?;
    Ok(files)
}

fn summary(r: &CampaignReport) -> String {
    let mut s = String::new();
    let pct = if r.reachable_edge_total == 0 {
        100.0
    } else {
        100.0 * r.covered_edges as f64 / r.reachable_edge_total as f64
    };
    let stop = match r.stop_reason {
        super::StopReason::FullCoverage => "full_coverage",
        super::StopReason::IterationCap => "iteration_cap",
        super::StopReason::TimeBudget => "time_budget",
    };
    let admitted: usize = r.symbolic_phases.iter().map(|p| p.admitted.len()).sum();
    let _ = writeln!(s, "iterations: {}", r.iterations);
    let _ = writeln!(s, "executions: {}", r.executions);
    let _ = writeln!(s, "stop_reason: {stop}");
    let _ = writeln!(s, "edges_covered: {}", r.covered_edges);
    let _ = writeln!(s, "edges_reachable: {}", r.reachable_edge_total);
    let _ = writeln!(s, "coverage_percent: {pct:.1}");
    let _ = writeln!(s, "corpus_size: {}", r.final_corpus_size);
    let _ = writeln!(s, "crashes: {}", r.crashes.len());
    let _ = writeln!(s, "symbolic_phases: {}", r.symbolic_phases.len());
    let _ = writeln!(s, "symbolic_admitted: {admitted}");
    let _ = writeln!(s, "validation_discards: {}", r.validation_discards());
    s
}

fn read_json(path: &Path) -> Result<Value, CampaignError> {
    let text = fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CampaignError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        )
    })
}

/// Human-readable digest of an output directory.
pub fn load_summary(dir: &Path) -> Result<String, CampaignError> {
    let summary_path = dir.join("summary.txt");
    let mut out =
        fs::read_to_string(&summary_path).map_err(|e| CampaignError::io(&summary_path, e))?;
    let crashes = read_json(&dir.join("crashes.json"))?;
    for c in crashes.as_array().into_iter().flatten() {
        let field = |k: &str| c.get(k).and_then(Value::as_str).unwrap_or("-").to_string();
        let _ = writeln!(
            out,
            "crash {}: {} {} at {} (pc {})",
            c.get("input_id").and_then(Value::as_u64).unwrap_or(0),
            field("kind"),
            field("operation"),
            field("address"),
            field("pc")
        );
    }
    let sym = read_json(&dir.join("symbolic.json"))?;
    for p in sym
        .get("phases")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        let n = |k: &str| p.get(k).and_then(Value::as_u64).unwrap_or(0);
        let admitted = p
            .get("admitted")
            .and_then(Value::as_array)
            .map_or(0, |a| a.len());
        let _ = writeln!(
            out,
            "phase @{}: {} pairs, sat {}, unsat {}, unknown {}, validation_fail {}, admitted {}",
            n("trigger_iteration"),
            n("pairs_attempted"),
            n("sat"),
            n("unsat"),
            n("unknown"),
            n("validation_fail"),
            admitted
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{run, CampaignConfig};
    use crate::fixtures;

    #[test]
    fn empty_campaign_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = CampaignReport::empty(CampaignConfig::default(), 3);
        let files = emit_report(&r, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(files.coverage_csv).unwrap(),
            "iteration,edges,phase\n"
        );
        assert_eq!(fs::read_to_string(files.crashes_json).unwrap(), "[]\n");
        assert!(load_summary(dir.path()).unwrap().contains("crashes: 0"));
    }

    #[test]
    fn overflow_crash_is_reported() {
        let p = fixtures::overflow();
        let config = CampaignConfig {
            max_iterations: Some(30),
            stop_at_full_coverage: false,
            ..CampaignConfig::default()
        };
        let r = run(&p, &[vec![4]], &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        let v: Value =
            serde_json::from_str(&fs::read_to_string(&files.crashes_json).unwrap()).unwrap();
        let c = v
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["kind"] == "buffer_overflow")
            .expect("overflow reported");
        assert!(c["address"].as_str().unwrap().starts_with("0x"));
        assert_eq!(c["operation"], "write");
        assert!(!c["backtrace"].as_array().unwrap().is_empty());
        assert!(dir.path().join("crashes/crash-0.bin").exists());
    }

    #[test]
    fn re_emit_is_byte_identical() {
        let p = fixtures::scoring();
        let config = CampaignConfig {
            max_iterations: Some(40),
            batch_size: 16,
            ..CampaignConfig::default()
        };
        let r = run(&p, &[vec![0; 4]], &config).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_report(&r, a.path()).unwrap();
        emit_report(&r, b.path()).unwrap();
        emit_report(&r, b.path()).unwrap();
        for f in [
            "coverage.csv",
            "crashes.json",
            "symbolic.json",
            "summary.txt",
            "corpus/index.json",
            "config.txt",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let r = CampaignReport::empty(CampaignConfig::default(), 0);
        let err = emit_report(&r, &blocker).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
