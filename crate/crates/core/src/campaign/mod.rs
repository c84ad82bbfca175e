//! The hybrid loop: fuzz in batches, and on a coverage plateau solve the
//! frontier pairs symbolically and feed validated inputs back.

mod config;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{CampaignConfig, CONFIG_KEYS};
pub use report::{emit_report, load_summary, ReportFiles};

use crate::cfg::{Cfg, CoverageMap};
use crate::error::CampaignError;
use crate::frontier::{extract_pairs_with, FrontierQueue};
use crate::fuzz::{
    fit_input, run_batch, Corpus, CrashLog, CrashRecord, CrashReport, FuzzTarget, TestInput,
};
use crate::hexfmt;
use crate::minivm::Program;
use crate::plateau;
use crate::symexec::{run_pair, PairOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fuzz,
    Symbolic,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Fuzz => "fuzz",
            Phase::Symbolic => "symbolic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub edges: u64,
    pub phase: Phase,
}

/// One constraint pair handled in a symbolic phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(with = "hexfmt")]
    pub src: u32,
    #[serde(with = "hexfmt")]
    pub dst: u32,
    #[serde(with = "hexfmt")]
    pub goal: u32,
    pub score: u32,
    pub witness: Option<usize>,
    pub outcome: String,
    pub conjuncts: Vec<String>,
    /// Corpus id of the admitted input.
    pub admitted: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub trigger_iteration: u64,
    pub pairs_attempted: usize,
    pub sat: usize,
    pub unsat: usize,
    pub unknown: usize,
    pub validation_fail: usize,
    pub skipped: usize,
    pub admitted: Vec<usize>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FullCoverage,
    IterationCap,
    TimeBudget,
}

/// Persistable summary of one corpus entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: usize,
    pub origin: crate::fuzz::Origin,
    pub parent: Option<usize>,
    pub iteration: u64,
    pub discovered_edges: usize,
    #[serde(with = "hexfmt::option")]
    pub target: Option<u32>,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl CorpusRecord {
    pub fn file_name(&self) -> String {
        format!("{:06}-{}.bin", self.id, self.origin.name())
    }
}

#[derive(Clone, Debug)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub coverage_curve: Vec<CurvePoint>,
    pub crashes: Vec<CrashRecord>,
    pub symbolic_phases: Vec<PhaseStats>,
    pub corpus: Vec<CorpusRecord>,
    pub final_corpus_size: usize,
    pub reachable_edge_total: usize,
    pub covered_edges: usize,
    pub iterations: u64,
    pub executions: u64,
    pub stop_reason: StopReason,
}

impl CampaignReport {
    /// An empty report with no iterations.
    pub fn empty(config: CampaignConfig, reachable_edge_total: usize) -> Self {
        CampaignReport {
            config,
            coverage_curve: Vec::new(),
            crashes: Vec::new(),
            symbolic_phases: Vec::new(),
            corpus: Vec::new(),
            final_corpus_size: 0,
            reachable_edge_total,
            covered_edges: 0,
            iterations: 0,
            executions: 0,
            stop_reason: StopReason::IterationCap,
        }
    }

    pub fn fully_covered(&self) -> bool {
        self.covered_edges >= self.reachable_edge_total
    }

    pub fn validation_discards(&self) -> usize {
        self.symbolic_phases.iter().map(|p| p.validation_fail).sum()
    }
}

/// Runs a campaign to completion.
pub fn run(
    program: &Program,
    seeds: &[Vec<u8>],
    config: &CampaignConfig,
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(CampaignError::NoSeeds);
    }
    let started = Instant::now();
    let cfg = Cfg::build(program);
    let seeds: Vec<Vec<u8>> = seeds
        .iter()
        .map(|s| fit_input(s, program.input_size()))
        .collect();
    let target = FuzzTarget::new(program, &cfg, config.step_budget, config.hook, &seeds[0])?;
    let reachable = cfg.reachable_edge_count();

    let mut corpus = Corpus::new();
    let mut cov = CoverageMap::new();
    let mut crashes = CrashLog::new();
    let mut executions = 0u64;
    for s in &seeds {
        let out = target.run(s);
        executions += 1;
        let new = cov.record_trace(&cfg, &out.edge_trace)?;
        if let Some(r) = CrashReport::from_outcome(&out) {
            crashes.record(s, 0, r);
        }
        let input = TestInput {
            discovered_edges: new,
            ..TestInput::seed(s.clone())
        };
        corpus.admit(input, target.start_block(), &out.edge_trace);
    }
    cov.push_iteration();

    let mut master = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut curve = Vec::new();
    let mut phases = Vec::new();
    let mut window_start = 0u64;
    let mut i = 0u64;
    let stop_reason = loop {
        if config.stop_at_full_coverage && cov.edge_count() >= reachable {
            break StopReason::FullCoverage;
        }
        if config.max_iterations.is_some_and(|cap| i >= cap) {
            break StopReason::IterationCap;
        }
        if started.elapsed().as_secs_f64() >= config.time_budget_secs {
            break StopReason::TimeBudget;
        }
        i += 1;
        let batch = run_batch(
            &target,
            &mut corpus,
            &mut cov,
            &mut crashes,
            config.batch_size,
            master.gen(),
            i,
        )?;
        executions += batch.execs;
        let mut phase = Phase::Fuzz;
        let window = config.plateau.window as u64;
        let armed = !config.plateau_reset_after_symbolic || i - window_start >= window;
        if config.symbolic
            && armed
            && plateau::detect(cov.history(), i as usize, &config.plateau) == 1
        {
            log::info!("plateau at iteration {i}: {} edges", cov.edge_count());
            if let Some(stats) = symbolic_phase(
                &target,
                &mut corpus,
                &mut cov,
                &mut crashes,
                config,
                i,
                &mut executions,
            )? {
                cov.refresh_iteration();
                phases.push(stats);
                phase = Phase::Symbolic;
                window_start = i;
            }
        }
        curve.push(CurvePoint {
            iteration: i,
            edges: cov.edge_count() as u64,
            phase,
        });
    };

    let corpus_records = corpus
        .entries()
        .iter()
        .map(|e| CorpusRecord {
            id: e.id,
            origin: e.input.origin,
            parent: e.input.parent,
            iteration: e.input.iteration,
            discovered_edges: e.input.discovered_edges,
            target: e.input.target,
            bytes: e.input.bytes.clone(),
        })
        .collect();
    Ok(CampaignReport {
        config: config.clone(),
        coverage_curve: curve,
        crashes: crashes.records().to_vec(),
        symbolic_phases: phases,
        corpus: corpus_records,
        final_corpus_size: corpus.len(),
        reachable_edge_total: reachable,
        covered_edges: cov.edge_count(),
        iterations: i,
        executions,
        stop_reason,
    })
}

fn symbolic_phase(
    target: &FuzzTarget<'_>,
    corpus: &mut Corpus,
    cov: &mut CoverageMap,
    crashes: &mut CrashLog,
    config: &CampaignConfig,
    iteration: u64,
    executions: &mut u64,
) -> Result<Option<PhaseStats>, CampaignError> {
    let cfg = target.cfg();
    let pairs = extract_pairs_with(cfg, cov, corpus, config.target_mode);
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut queue = FrontierQueue::build(pairs, config.max_pairs);
    let mut stats = PhaseStats {
        trigger_iteration: iteration,
        ..PhaseStats::default()
    };
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    while let Some(pair) = queue.pop() {
        let mut record = PairRecord {
            src: pair.src,
            dst: pair.dst,
            goal: pair.goal,
            score: pair.score,
            witness: pair.witness,
            outcome: String::new(),
            conjuncts: Vec::new(),
            admitted: None,
        };
        stats.pairs_attempted += 1;
        if cov.is_covered(pair.dst) {
            record.outcome = "already_covered".into();
            stats.skipped += 1;
            stats.pairs.push(record);
            continue;
        }
        let Some(witness) = pair.witness.and_then(|w| corpus.get(w)) else {
            record.outcome = "stale_witness".into();
            stats.skipped += 1;
            stats.pairs.push(record);
            continue;
        };
        let witness_bytes = witness.input.bytes.clone();
        let outcome = run_pair(target, &witness_bytes, pair.src, pair.goal, &config.symexec);
        record.outcome = outcome.name().to_string();
        *tally.entry(outcome.name()).or_default() += 1;
        match outcome {
            PairOutcome::Sat { mut input, phi } => {
                stats.sat += 1;
                record.conjuncts = phi.all().iter().map(|c| c.to_string()).collect();
                let out = target.run(&input.bytes);
                *executions += 1;
                let new = cov.record_trace(cfg, &out.edge_trace)?;
                if let Some(r) = CrashReport::from_outcome(&out) {
                    crashes.record(&input.bytes, iteration, r);
                }
                if new > 0 {
                    input.parent = pair.witness;
                    input.discovered_edges = new;
                    input.iteration = iteration;
                    input.target = Some(pair.goal);
                    let id = corpus.admit(input, target.start_block(), &out.edge_trace);
                    record.admitted = Some(id);
                    stats.admitted.push(id);
                }
            }
            PairOutcome::Unsat { phi } => {
                stats.unsat += 1;
                record.conjuncts = phi.all().iter().map(|c| c.to_string()).collect();
            }
            PairOutcome::Unknown { phi } => {
                stats.unknown += 1;
                record.conjuncts = phi.all().iter().map(|c| c.to_string()).collect();
            }
            PairOutcome::ValidationFailed { phi } => {
                stats.validation_fail += 1;
                record.conjuncts = phi.all().iter().map(|c| c.to_string()).collect();
            }
            PairOutcome::Skipped(e) => {
                log::debug!(
                    "pair {}->{} skipped: {e}",
                    hexfmt::addr(pair.src),
                    hexfmt::addr(pair.dst)
                );
                stats.skipped += 1;
            }
        }
        stats.pairs.push(record);
    }
    log::info!(
        "symbolic phase at iteration {iteration}: {} pairs, {} admitted, outcomes {:?}",
        stats.pairs_attempted,
        stats.admitted.len(),
        tally
    );
    Ok(Some(stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::fuzz::Origin;

    fn quick(symbolic: bool, seed: u64) -> CampaignConfig {
        CampaignConfig {
            symbolic,
            rng_seed: seed,
            ..CampaignConfig::default()
        }
    }

    #[test]
    fn covered_target_has_no_phases() {
        let p = crate::minivm::assemble(".input 1\n IN r0, 0\n JMP end\nend: HALT\n").unwrap();
        let config = CampaignConfig {
            stop_at_full_coverage: false,
            max_iterations: Some(30),
            ..CampaignConfig::default()
        };
        let r = run(&p, &[vec![0]], &config).unwrap();
        assert!(r.symbolic_phases.is_empty());
        assert_eq!(r.coverage_curve.len(), 30);
        assert!(r
            .coverage_curve
            .iter()
            .all(|c| c.edges == 1 && c.phase == Phase::Fuzz));
    }

    #[test]
    fn hybrid_finishes_gauntlet() {
        let p = fixtures::gauntlet();
        let r = run(&p, &[vec![0; 64]], &quick(true, 3)).unwrap();
        assert!(
            r.fully_covered(),
            "{} of {}",
            r.covered_edges,
            r.reachable_edge_total
        );
        assert_eq!(r.stop_reason, StopReason::FullCoverage);
        assert!(r.symbolic_phases.iter().all(|p| !p.admitted.is_empty()));
        assert!(r.corpus.iter().any(|c| c.origin == Origin::Symbolic));
        assert!(r
            .coverage_curve
            .windows(2)
            .all(|w| w[0].edges <= w[1].edges));
    }

    #[test]
    fn no_symbolic_records_no_phases() {
        let p = fixtures::gauntlet();
        let config = CampaignConfig {
            max_iterations: Some(40),
            ..quick(false, 3)
        };
        let r = run(&p, &[vec![0; 64]], &config).unwrap();
        assert!(r.symbolic_phases.is_empty());
        assert_eq!(r.iterations, 40);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let p = fixtures::scoring();
        let config = CampaignConfig {
            max_iterations: Some(50),
            batch_size: 32,
            ..quick(true, 9)
        };
        let a = run(&p, &[vec![0; 4]], &config).unwrap();
        let b = run(&p, &[vec![0; 4]], &config).unwrap();
        assert_eq!(a.coverage_curve, b.coverage_curve);
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn rejects_empty_seed_list() {
        let p = fixtures::checks();
        assert!(matches!(
            run(&p, &[], &CampaignConfig::default()),
            Err(CampaignError::NoSeeds)
        ));
    }

    #[test]
    fn plateau_without_reset_fires_every_iteration() {
        let p = crate::minivm::assemble(".input 1\n IN r0, 0\n BEQ r0, 1, a\n HALT\na: LOADI r1, 0\n BEQ r1, 1, b\n HALT\nb: HALT\n").unwrap();
        let config = CampaignConfig {
            max_iterations: Some(25),
            batch_size: 8,
            plateau: crate::plateau::PlateauConfig::new(5, 0.5).unwrap(),
            plateau_reset_after_symbolic: false,
            ..quick(true, 1)
        };
        let r = run(&p, &[vec![1]], &config).unwrap();
        let triggers: Vec<u64> = r
            .symbolic_phases
            .iter()
            .map(|p| p.trigger_iteration)
            .collect();
        assert_eq!(triggers, (5..=25).collect::<Vec<_>>());
        let config = CampaignConfig {
            plateau_reset_after_symbolic: true,
            ..config
        };
        let r = run(&p, &[vec![1]], &config).unwrap();
        let triggers: Vec<u64> = r
            .symbolic_phases
            .iter()
            .map(|p| p.trigger_iteration)
            .collect();
        assert_eq!(triggers, vec![5, 10, 15, 20, 25]);
    }
}
