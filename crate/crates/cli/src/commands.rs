use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use pcal_core::calibrators::{self, evaluate_calibrator, split_holdout, CalibrationOutcome};
use pcal_core::diagrams::{reliability_table, render_svg};
use pcal_core::metrics::metric_report;
use pcal_core::records::{normalize_all, parse_records, validate_records, PronounPairRecord};
use pcal_core::report::{self, round_display, ReportFormat};
use pcal_core::resample::subsample_study;
use pcal_core::{CalibratorModel, Error, ScoredInstance, SplitSpec};

use crate::args::{AblateArgs, CalibrateArgs, CommonArgs};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn from_core(context: &str, err: Error) -> Self {
        let code = match &err {
            Error::NoConvergence { .. } => EXIT_NUMERICAL,
            Error::TooFewRepeats(_) | Error::InvalidBinning(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        let mut message = format!("{context}: {err}");
        if let Error::Validation(violations) = &err {
            for v in violations {
                message.push_str(&format!("\n  {v}"));
            }
        }
        Failure { code, message }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

/// Records of one (model, dataset) pair.
struct Group {
    model: String,
    dataset: String,
    records: Vec<PronounPairRecord>,
}

impl Group {
    fn label(&self) -> String {
        format!("{} / {}", self.model, self.dataset)
    }

    fn slug(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                        c
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        format!("{}__{}", clean(&self.model), clean(&self.dataset))
    }

    fn instances(&self) -> Vec<ScoredInstance> {
        normalize_all(&self.records)
    }
}

fn read_file(path: &Path) -> CmdResult<Vec<PronounPairRecord>> {
    let file = File::open(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    parse_records(BufReader::new(file))
        .map_err(|e| Failure::from_core(&path.display().to_string(), e))
}

/// Reads every input and groups records by (model, dataset), sorted.
fn load_groups(paths: &[PathBuf]) -> CmdResult<Vec<Group>> {
    let mut by_key: BTreeMap<(String, String), Vec<PronounPairRecord>> = BTreeMap::new();
    for path in paths {
        for record in read_file(path)? {
            by_key
                .entry((record.model_name.clone(), record.dataset_name.clone()))
                .or_default()
                .push(record);
        }
    }
    let groups: Vec<Group> = by_key
        .into_iter()
        .map(|((model, dataset), records)| Group {
            model,
            dataset,
            records,
        })
        .collect();
    for g in &groups {
        validate_records(&g.records).map_err(|e| Failure::from_core(&g.label(), e))?;
    }
    if groups.is_empty() {
        return Err(Failure::data("no records in input"));
    }
    Ok(groups)
}

/// Writes `content` to `dir/name` through a temporary file and rename, or to
/// stdout when no directory is given.
fn emit(dir: Option<&Path>, name: &str, content: &str) -> CmdResult {
    let io_fail = |e: std::io::Error, path: &Path| {
        Failure::data(format!("cannot write {}: {e}", path.display()))
    };
    match dir {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .map_err(|e| io_fail(e, Path::new("<stdout>")))
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_fail(e, dir))?;
            let target = dir.join(name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_fail(e, dir))?;
            tmp.write_all(content.as_bytes())
                .map_err(|e| io_fail(e, &target))?;
            tmp.persist(&target)
                .map_err(|e| io_fail(e.error, &target))?;
            log::info!("wrote {}", target.display());
            Ok(())
        }
    }
}

fn extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Table => "txt",
        ReportFormat::Machine => "jsonl",
    }
}

pub fn evaluate(args: &CommonArgs) -> CmdResult {
    let scheme = args.scheme();
    let groups = load_groups(&args.input)?;
    let reports = groups
        .iter()
        .map(|g| {
            metric_report(&g.instances(), scheme, &g.model, &g.dataset)
                .map_err(|e| Failure::from_core(&g.label(), e))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let format = args.report_format();
    let text = report::render(&report::sorted(reports), format);
    emit(
        args.out.as_deref(),
        &format!("report.{}", extension(format)),
        &text,
    )
}

pub fn validate(args: &CommonArgs) -> CmdResult {
    let groups = load_groups(&args.input)?;
    let mut text = String::new();
    for g in &groups {
        let manifest =
            validate_records(&g.records).map_err(|e| Failure::from_core(&g.label(), e))?;
        match args.report_format() {
            ReportFormat::Machine => {
                let line = serde_json::json!({
                    "model": g.model,
                    "manifest": manifest,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            ReportFormat::Table => {
                let groups: Vec<&str> = manifest.groups.iter().map(String::as_str).collect();
                text.push_str(&format!(
                    "{}: {} records, label balance {}, groups [{}]\n",
                    g.label(),
                    manifest.record_count,
                    round_display(manifest.label_balance, 3),
                    groups.join(", ")
                ));
            }
        }
    }
    emit(
        args.out.as_deref(),
        &format!("manifest.{}", extension(args.report_format())),
        &text,
    )
}

fn outcome_table(g: &Group, spec: SplitSpec, o: &CalibrationOutcome) -> String {
    let mut before = o.before.clone();
    let mut after = o.after.clone();
    before.model_name = format!("{} (uncalibrated)", g.model);
    after.model_name = format!("{} ({})", g.model, o.calibrator.kind());
    let mut text = format!(
        "# {} calibration: validation {}, test {}, seed {}\n",
        o.calibrator.kind(),
        spec.validation_count,
        spec.test_count,
        spec.seed
    );
    text.push_str(&report::render_table(&[before, after]));
    text.push_str(&format!(
        "accuracy {} -> {} (delta {})\n",
        round_display(o.before.human_alignment, 3),
        round_display(o.after.human_alignment, 3),
        round_display(o.accuracy_delta, 3)
    ));
    let d = &o.calibrator.diagnostics;
    if d.separated {
        text.push_str("note: classes perfectly separated, slope capped\n");
    }
    if d.collapsed {
        text.push_str("note: temperature reached its upper bound\n");
    }
    if !d.dropped.is_empty() {
        text.push_str(&format!(
            "note: coefficients fixed at zero: {}\n",
            d.dropped.join(", ")
        ));
    }
    text
}

pub fn calibrate(args: &CalibrateArgs) -> CmdResult {
    let common = &args.common;
    let scheme = common.scheme();
    let spec = SplitSpec {
        validation_count: args.val_count,
        test_count: args.test_count,
        seed: args.seed,
    };
    let loaded = match &args.load {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            Some(
                CalibratorModel::from_text(&text)
                    .map_err(|e| Failure::from_core(&path.display().to_string(), e))?,
            )
        }
        None => None,
    };

    for g in load_groups(&common.input)? {
        let ctx = g.label();
        let (validation, test) =
            split_holdout(&g.instances(), spec).map_err(|e| Failure::from_core(&ctx, e))?;
        let model = match (&loaded, args.kind()) {
            (Some(m), _) => m.clone(),
            (None, Some(kind)) => {
                calibrators::fit(kind, &validation).map_err(|e| Failure::from_core(&ctx, e))?
            }
            (None, None) => return Err(Failure::usage("either --method or --load is required")),
        };
        let outcome = evaluate_calibrator(model, &test, scheme, &g.model, &g.dataset)
            .map_err(|e| Failure::from_core(&ctx, e))?;

        let format = common.report_format();
        let text = match format {
            ReportFormat::Table => outcome_table(&g, spec, &outcome),
            ReportFormat::Machine => {
                let mut s = serde_json::to_string(&outcome).expect("outcome serializes");
                s.push('\n');
                s
            }
        };
        let slug = g.slug();
        emit(
            common.out.as_deref(),
            &format!("calibrate_{slug}.{}", extension(format)),
            &text,
        )?;
        if common.out.is_some() {
            emit(
                common.out.as_deref(),
                &format!("calibrator_{slug}.json"),
                &outcome.calibrator.to_text(),
            )?;
        }
    }
    Ok(())
}

pub fn diagram(args: &CommonArgs) -> CmdResult {
    let Some(out) = args.out.as_deref() else {
        return Err(Failure::usage("diagram requires --out <dir>"));
    };
    let scheme = args.scheme();
    for g in load_groups(&args.input)? {
        let table = reliability_table(&g.instances(), scheme)
            .map_err(|e| Failure::from_core(&g.label(), e))?;
        let slug = g.slug();
        emit(
            Some(out),
            &format!("reliability_{slug}.svg"),
            &render_svg(&table),
        )?;
        emit(
            Some(out),
            &format!("reliability_{slug}.csv"),
            &table.to_csv(),
        )?;
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> CmdResult {
    if args.repeats < 2 {
        return Err(Failure::usage(format!(
            "--repeats must be at least 2, got {}",
            args.repeats
        )));
    }
    let common = &args.common;
    let scheme = common.scheme();
    for g in load_groups(&common.input)? {
        let study = subsample_study(&g.instances(), &args.sizes, args.repeats, args.seed, scheme)
            .map_err(|e| Failure::from_core(&g.label(), e))?;
        let (name, text) = match common.report_format() {
            ReportFormat::Machine => (format!("ablation_{}.csv", g.slug()), study.to_csv()),
            ReportFormat::Table => (
                format!("ablation_{}.txt", g.slug()),
                format!(
                    "# {}: {} draws per size, seed {}\n{}",
                    g.label(),
                    study.repeats,
                    study.seed,
                    study.to_table()
                ),
            ),
        };
        emit(common.out.as_deref(), &name, &text)?;
    }
    Ok(())
}
