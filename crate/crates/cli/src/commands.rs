use std::fmt;
use std::fs;
use std::path::Path;

use fedforest_core::analysis;
use fedforest_core::audit;
use fedforest_core::config::{ConfigError, RunConfig};
use fedforest_core::data::AccountRecord;
use fedforest_core::datagen;
use fedforest_core::model;
use fedforest_core::protocol;

use crate::ConfigArgs;

/// Failures split by exit code: configuration/usage problems exit 2,
/// run or audit failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Run(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn config_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| config_io(path, e))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dp) = &self.dp {
            cfg.dp_enabled = dp == "on";
        }
        if let Some(banks) = self.banks {
            cfg.data.banks = banks;
        }
        if self.broadcast_fallback {
            cfg.routing.broadcast_fallback = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_bank_tables(dir: &Path, banks: u32) -> Result<Vec<Vec<AccountRecord>>, CliError> {
    let mut tables = Vec::with_capacity(banks as usize);
    for j in 0..banks {
        let path = dir.join(format!("accounts_bank{j}.csv"));
        let text = fs::read_to_string(&path).map_err(|e| config_io(&path, e))?;
        tables.push(datagen::accounts_from_csv(&text).map_err(|e| CliError::Config(e.to_string()))?);
    }
    Ok(tables)
}

pub fn gen(args: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let cfg = args.load()?;
    fs::create_dir_all(out).map_err(|e| config_io(out, e))?;
    let tables = datagen::gen_accounts(cfg.seed, &cfg.data);
    for (j, table) in tables.iter().enumerate() {
        let path = out.join(format!("accounts_bank{j}.csv"));
        fs::write(&path, datagen::accounts_to_csv(table)).map_err(|e| config_io(&path, e))?;
    }
    let txs = datagen::gen_transactions(cfg.seed, &tables, &cfg.data);
    fs::write(out.join("transactions.csv"), datagen::transactions_to_csv(&txs))
        .map_err(|e| config_io(out, e))?;
    let test_txs = datagen::gen_test_transactions(cfg.seed, &tables, &cfg.data);
    fs::write(
        out.join("test_transactions.csv"),
        datagen::transactions_to_csv(&test_txs),
    )
    .map_err(|e| config_io(out, e))?;
    fs::write(out.join("run_config.txt"), cfg.render()).map_err(|e| config_io(out, e))?;
    println!(
        "generated {} banks x {} accounts, {} training and {} test transactions in {}",
        cfg.data.banks,
        cfg.data.accounts_per_bank,
        txs.len(),
        test_txs.len(),
        out.display()
    );
    Ok(())
}

pub fn train(args: &ConfigArgs, data: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = args.load()?;
    let tables = read_bank_tables(data, cfg.data.banks)?;
    let tx_path = data.join("transactions.csv");
    let text = fs::read_to_string(&tx_path).map_err(|e| config_io(&tx_path, e))?;
    let txs = datagen::transactions_from_csv(&text).map_err(|e| CliError::Config(e.to_string()))?;

    let mut warnings = Vec::new();
    if cfg.dp_enabled && cfg.oversample_ratio > 1.0 {
        warnings.push(format!(
            "oversample_ratio {} duplicates minority rows after capping; duplicated accounts can \
             exceed the sensitivity bound {} by that factor",
            cfg.oversample_ratio, cfg.dp_bound
        ));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let run = protocol::train(&cfg, &txs, &tables).map_err(|e| CliError::Run(e.to_string()))?;
    model::write_model(out, &run, warnings).map_err(|e| CliError::Run(e.to_string()))?;
    let summary = model::run_summary(&run, Vec::new());
    println!(
        "trained {} trees of height {}: {} red / {} green leaves (binary-model expectation {})",
        summary.tau,
        summary.height,
        summary.red_leaves,
        summary.green_leaves,
        summary
            .expected_red_leaves_binary_model
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    if let Some(eps) = summary.total_epsilon {
        println!("differential privacy: enabled, total epsilon {eps} (parallel composition)");
    }
    println!("model written to {}", out.display());
    Ok(())
}

pub fn infer(
    args: &ConfigArgs,
    model_dir: &Path,
    data: &Path,
    transactions: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = args.load()?;
    let tables = read_bank_tables(data, cfg.data.banks)?;
    let text = fs::read_to_string(transactions).map_err(|e| config_io(transactions, e))?;
    let txs = datagen::transactions_from_csv(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let records = datagen::derive_features(&txs, &cfg.data.pns_features);

    let mut run = model::load_for_inference(model_dir, &cfg, &tables)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let predictions =
        protocol::infer(&mut run, &records).map_err(|e| CliError::Run(e.to_string()))?;

    let mut csv = String::from("tx_id,label,confidence\n");
    for p in &predictions {
        csv.push_str(&format!("{},{},{}\n", p.tx_id, p.label, p.confidence));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| config_io(parent, e))?;
        }
    }
    fs::write(out, csv).map_err(|e| config_io(out, e))?;

    let flagged = predictions.iter().filter(|p| p.label == 1).count();
    println!(
        "labeled {} transactions ({flagged} anomalous) -> {}",
        predictions.len(),
        out.display()
    );

    // Score against ground truth when the input carries labels.
    let truth: Vec<u8> = txs.iter().filter_map(|t| t.label).collect();
    if truth.len() == txs.len() && !truth.is_empty() {
        let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
        let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
        let m = analysis::evaluate(&labels, &scores, &truth)
            .map_err(|e| CliError::Run(e.to_string()))?;
        println!(
            "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  average precision {:.4}",
            m.accuracy, m.precision, m.recall, m.f1, m.average_precision
        );
    }
    Ok(())
}

pub fn audit(transcript: &Path, compare: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(transcript).map_err(|e| config_io(transcript, e))?;
    let report = audit::audit_jsonl(&text).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "{}: {} messages, {} events, aggregator received {} ciphertexts",
        transcript.display(),
        report.messages,
        report.events,
        report.aggregator_ciphertexts_received
    );
    for v in &report.violations {
        println!("violation at seq {}: {}", v.seq, v.reason);
    }
    let mut failed = !report.pass;

    if let Some(other_path) = compare {
        let other_text = fs::read_to_string(other_path).map_err(|e| config_io(other_path, e))?;
        let other = audit::audit_jsonl(&other_text).map_err(|e| CliError::Config(e.to_string()))?;
        failed |= !other.pass;
        let diffs = audit::diff_summaries(&report, &other);
        if diffs.is_empty() {
            println!("view shapes match: bank and aggregator summaries are identical");
        } else {
            for d in &diffs {
                println!("shape mismatch: {d}");
            }
            failed = true;
        }
    }

    if failed {
        Err(CliError::Run("audit failed".to_string()))
    } else {
        println!("audit passed");
        Ok(())
    }
}

pub struct AnalyzeParams {
    pub cs: u64,
    pub cb: u64,
    pub height: u32,
    pub tau: u32,
    pub trials: u64,
    pub seed: u64,
    pub accounts: u64,
    pub banks: u64,
    pub flags: u64,
    pub sigma: u64,
    pub hashes: u64,
}

pub fn analyze(p: AnalyzeParams) -> Result<(), CliError> {
    println!(
        "red-leaf expectation, {} PNS conditions, {} bank conditions:",
        p.cs, p.cb
    );
    println!("{:>6} {:>14} {:>14} {:>20}", "height", "per tree", "x tau", "monte carlo");
    for h in 1..=p.height {
        let per_tree = analysis::expected_red_leaves(p.cs, p.cb, h, 1)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let total = per_tree * f64::from(p.tau);
        let mc = if p.trials > 0 && h == p.height {
            let est = analysis::monte_carlo_red_leaves(p.seed, p.cs, p.cb, h, p.trials)
                .map_err(|e| CliError::Config(e.to_string()))?;
            format!("{:.4} +- {:.4}", est.mean, est.stderr)
        } else {
            "-".to_string()
        };
        println!("{:>6} {:>14.4} {:>14.4} {:>20}", h, per_tree, total, mc);
    }
    let total = analysis::expected_red_leaves(p.cs, p.cb, p.height, p.tau)
        .map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "expected red leaves at tau {} height {}: {:.4} (~ {})",
        p.tau,
        p.height,
        total,
        total.round()
    );

    // Per-probe cost model: each bank account probes `hashes` bins per
    // table, a probe is one PET (sigma multiplies) plus one count multiply.
    let red = total;
    let per_flag = p.accounts as f64 / p.flags as f64;
    let pets = 2.0 * red * p.banks as f64 * per_flag * p.hashes as f64;
    let muls = pets * (p.sigma as f64 + 1.0);
    println!("\ntraining cost model ({} banks, {} accounts/bank, {} flags):", p.banks, p.accounts, p.flags);
    println!("  encrypted tables: {:.0} (two per red leaf)", 2.0 * red);
    println!("  equality tests:   {pets:.3e}");
    println!("  multiplications:  {muls:.3e} (PET width {}, +1 count multiply per probe)", p.sigma);
    println!("  work grows with red leaves, bank accounts and table size; see the cost report of a run for measured counts");
    Ok(())
}
