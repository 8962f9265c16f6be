//! Command-line front end. Exit codes: 0 success, 1 validation or rule
//! error, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxpipe_core::canonical::to_canonical_pretty;
use ctxpipe_core::dataset::GroupBy;
use ctxpipe_core::pipeline::MAIN_BRANCH;
use ctxpipe_core::roles::PackageFinding;
use ctxpipe_core::trail::Verification;
use ctxpipe_core::workspace::{read_dataset_source, Workspace};
use ctxpipe_core::{Notice, PipelineId, Scale, Stage};
use serde::Serialize;

use crate::ops::{self, ErrorClass, OpError, OpResult, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Structured,
}

#[derive(Debug, Parser)]
#[command(name = "ctxpipe", version, about = "Context-package pipeline orchestrator")]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, short = 'w', env = "CTXPIPE_WORKSPACE", default_value = ".", global = true)]
    pub workspace: PathBuf,
    /// Output style; `structured` prints canonical JSON.
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the workspace skeleton.
    Init,
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    #[command(subcommand)]
    Stage(StageCmd),
    #[command(subcommand)]
    Finding(FindingCmd),
    #[command(subcommand)]
    Package(PackageCmd),
    #[command(subcommand)]
    Template(TemplateCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Estimate(EstimateCmd),
    #[command(subcommand)]
    Trail(TrailCmd),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Require `Authorization: Bearer <token>` on every request.
        #[arg(long, env = "CTXPIPE_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    Create {
        #[arg(long)]
        project: String,
        #[arg(long)]
        domain: String,
        #[arg(long, value_parser = parse_from_str::<Scale>)]
        scale: Scale,
    },
    /// Close a pipeline; sprint pipelines missing an auditor ask first.
    Close {
        id: String,
        /// Close without asking.
        #[arg(long, short = 'y')]
        yes: bool,
    },
    /// One pipeline's lanes, or all pipelines when no id is given.
    Status { id: Option<String> },
    /// Fan a completed design out to parallel builder branches.
    Branch {
        id: String,
        #[arg(long = "design")]
        design_record_id: String,
        #[arg(long = "branch", required = true, value_delimiter = ',')]
        branches: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum StageCmd {
    Begin {
        id: String,
        #[arg(long, value_parser = parse_from_str::<Stage>)]
        stage: Stage,
        #[arg(long)]
        tool: String,
        #[arg(long, default_value = "generalist_llm")]
        tool_type: String,
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long)]
        package: String,
        #[arg(long, default_value = MAIN_BRANCH)]
        branch: String,
    },
    Complete {
        id: String,
        #[arg(long)]
        record: String,
        #[arg(long)]
        artifact: String,
        /// Cross-tool comparison outcome (Auditor records only).
        #[arg(long)]
        pattern: Option<String>,
    },
    Skip {
        id: String,
        #[arg(long, value_parser = parse_from_str::<Stage>)]
        stage: Stage,
        #[arg(long)]
        reason: String,
        #[arg(long, default_value = MAIN_BRANCH)]
        branch: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum FindingCmd {
    Record {
        id: String,
        #[arg(long)]
        severity: String,
        #[arg(long)]
        category: String,
        #[arg(long)]
        description: String,
        #[arg(long, default_value = MAIN_BRANCH)]
        branch: String,
        #[arg(long = "finding-id")]
        finding_id: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PackageCmd {
    /// Attach a manifest to the pipeline it names.
    Add { manifest: PathBuf },
    Validate { manifest: PathBuf },
    /// Resolve a declared conflict between two elements.
    Resolve {
        /// Manifest file; omit to use an attached package.
        #[arg(long, conflicts_with_all = ["pipeline", "package"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "package")]
        pipeline: Option<String>,
        #[arg(long, requires = "pipeline")]
        package: Option<String>,
        a: String,
        b: String,
    },
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ClassifyArgs {
    #[arg(long)]
    tokens: Option<u64>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Estimate tokens from a file's size.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TemplateCmd {
    List,
    /// Write a type's templates to `templates/<type>/` or to `--out`.
    Export {
        type_name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Validate { file: PathBuf },
    Instantiate {
        type_name: String,
        #[arg(long)]
        project: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        date: Option<NaiveDate>,
        /// META override, `key=value`; repeatable.
        #[arg(long = "set", value_parser = parse_key_value)]
        overrides: Vec<(String, String)>,
        /// Directory to write `<stage>.md` files into; prints when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Import a combined file or a directory of record files.
    Import {
        path: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    List,
    Report {
        name: String,
        #[arg(value_parser = parse_from_str::<ops::ReportKind>)]
        kind: ops::ReportKind,
        #[arg(long, value_parser = parse_from_str::<GroupBy>)]
        group_by: Option<GroupBy>,
    },
}

#[derive(Debug, Subcommand)]
pub enum EstimateCmd {
    /// Lincoln-Petersen population estimate.
    Lp(CaptureArgs),
    /// Chapman estimate, defined when the overlap is zero.
    Chapman(CaptureArgs),
    /// Detection probability of independent reviewers.
    Nversion {
        #[arg(long = "p", required = true, value_delimiter = ',')]
        p: Vec<f64>,
        #[command(flatten)]
        out: Decimals,
    },
    /// Information-bottleneck objective.
    Ib {
        #[arg(long)]
        i_xt: f64,
        #[arg(long)]
        i_ty: f64,
        #[arg(long)]
        beta: f64,
        #[command(flatten)]
        out: Decimals,
    },
    /// Defect cost at a later phase.
    Boehm {
        #[arg(long)]
        c0: f64,
        #[arg(long)]
        phase: u32,
        #[command(flatten)]
        out: Decimals,
    },
    /// Unit cost on a learning curve.
    Wright {
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        rate: f64,
        #[command(flatten)]
        out: Decimals,
    },
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    #[arg(long)]
    n1: u64,
    #[arg(long)]
    n2: u64,
    #[arg(long)]
    m: u64,
    #[command(flatten)]
    out: Decimals,
}

#[derive(Debug, Args)]
pub struct Decimals {
    /// Fixed number of decimals in human output.
    #[arg(long)]
    decimals: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TrailCmd {
    Render {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Verify { id: String },
}

fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

/// Streams a command writes to.
pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    /// Source of confirmation answers; `None` means non-interactive.
    pub input: Option<&'a mut dyn BufRead>,
}

/// Parse `args` and run, writing to the process streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    use std::io::IsTerminal;
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let stdin = std::io::stdin();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    let mut input = stdin.lock();
    let interactive = std::io::stdin().is_terminal();
    let io = Io {
        out: &mut out,
        err: &mut err,
        input: if interactive { Some(&mut input) } else { None },
    };
    run_with(args, io)
}

pub fn run_with<I, T>(args: I, mut io: Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(if e.use_stderr() { &mut *io.err } else { &mut *io.out }, "{}", e.render());
            return code;
        }
    };
    let format = cli.format;
    match execute(cli, &mut io) {
        Ok(code) => code,
        Err(e) => {
            match format {
                Format::Structured => {
                    let _ = writeln!(io.err, "{}", to_canonical_pretty(&e).unwrap_or_default().trim_end());
                }
                Format::Human => {
                    let _ = writeln!(io.err, "{e}");
                }
            }
            EXIT_FAILURE
        }
    }
}

struct Ctx<'a, 'b> {
    format: Format,
    io: &'a mut Io<'b>,
}

impl Ctx<'_, '_> {
    fn emit<T: Serialize>(&mut self, value: &T, human: impl FnOnce(&T) -> String) -> OpResult<()> {
        let text = match self.format {
            Format::Structured => to_canonical_pretty(value)
                .map_err(|e| OpError::new(ErrorClass::Internal, "ENCODE_FAILED", e.to_string()))?,
            Format::Human => {
                let mut s = human(value);
                if !s.is_empty() && !s.ends_with('\n') {
                    s.push('\n');
                }
                s
            }
        };
        self.io.out.write_all(text.as_bytes()).map_err(io_failure)
    }

    fn notices(&mut self, notices: &[Notice]) {
        if self.format == Format::Human {
            for n in notices {
                let _ = writeln!(self.io.err, "{}: {}: {}", n.severity, n.code, n.message);
            }
        }
    }
}

fn io_failure(e: std::io::Error) -> OpError {
    OpError::new(ErrorClass::Internal, "IO_ERROR", e.to_string())
}

fn read_file(path: &Path) -> OpResult<String> {
    fs::read_to_string(path).map_err(|e| OpError::invalid("IO_ERROR", format!("{}: {e}", path.display())))
}

fn open_ws(root: &Path) -> OpResult<Workspace> {
    Ok(Workspace::open(root)?)
}

fn execute(cli: Cli, io: &mut Io<'_>) -> OpResult<i32> {
    let mut ctx = Ctx { format: cli.format, io };
    let root = cli.workspace;
    match cli.command {
        Command::Init => {
            let r = ops::init(&root)?;
            ctx.emit(&r, |r| format!("Initialized ctxpipe workspace at {} (schema {})", r.root, r.schema_version))?;
        }
        Command::Pipeline(cmd) => return pipeline(&mut ctx, &open_ws(&root)?, cmd),
        Command::Stage(cmd) => stage(&mut ctx, &open_ws(&root)?, cmd)?,
        Command::Finding(FindingCmd::Record {
            id,
            severity,
            category,
            description,
            branch,
            finding_id,
        }) => {
            let ws = open_ws(&root)?;
            let req: ops::FindingRequest = ops::decode(serde_json::json!({
                "branch": branch,
                "finding_id": finding_id,
                "severity": severity,
                "category": category,
                "description": description,
            }))?;
            let m = ops::record_finding(&ws, &ops::parse_pipeline_id(&id)?, &req)?;
            ctx.notices(&m.notices);
            ctx.emit(&m, |m| {
                format!(
                    "{} routed to {} (record {})",
                    m.result.finding_id, m.result.target_stage, m.result.record_id
                )
            })?;
        }
        Command::Package(cmd) => return package(&mut ctx, &root, cmd),
        Command::Template(cmd) => return template(&mut ctx, &root, cmd),
        Command::Dataset(cmd) => dataset(&mut ctx, &open_ws(&root)?, cmd)?,
        Command::Estimate(cmd) => estimate(&mut ctx, cmd)?,
        Command::Trail(cmd) => return trail(&mut ctx, &open_ws(&root)?, cmd),
        Command::Serve { bind, token } => {
            let ws = open_ws(&root)?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| OpError::new(ErrorClass::Internal, "RUNTIME", e.to_string()))?;
            rt.block_on(crate::api::serve(ws, &bind, token))?;
        }
    }
    Ok(EXIT_OK)
}

fn pipeline(ctx: &mut Ctx<'_, '_>, ws: &Workspace, cmd: PipelineCmd) -> OpResult<i32> {
    match cmd {
        PipelineCmd::Create { project, domain, scale } => {
            let m = ops::create_pipeline(ws, &ops::CreatePipelineRequest { project, domain, scale })?;
            ctx.emit(&m, |m| m.result.pipeline_id.to_string())?;
        }
        PipelineCmd::Close { id, yes } => {
            let id = ops::parse_pipeline_id(&id)?;
            let mut confirm = yes;
            if !confirm {
                let preview = ops::close_preview(ws, &id)?;
                if preview.needs_confirmation {
                    confirm = ask_confirmation(ctx, &preview.warnings)?;
                    if !confirm {
                        let _ = writeln!(ctx.io.err, "close cancelled");
                        return Ok(EXIT_FAILURE);
                    }
                }
            }
            let m = ops::close_pipeline(ws, &id, &ops::CloseRequest { confirm })?;
            ctx.notices(&m.notices);
            ctx.emit(&m, |m| format!("Closed {}", m.result.pipeline_id))?;
        }
        PipelineCmd::Status { id: None } => {
            let list = ops::list_pipelines(ws)?;
            ctx.emit(&list, |list| {
                if list.is_empty() {
                    return "No pipelines. Create one with `ctxpipe pipeline create`.".into();
                }
                table(
                    &["Pipeline", "Scale", "Status", "Revision"],
                    list.iter()
                        .map(|p| {
                            vec![
                                p.pipeline_id.to_string(),
                                p.scale.to_string(),
                                format!("{:?}", p.status).to_lowercase(),
                                p.revision.to_string(),
                            ]
                        })
                        .collect(),
                )
            })?;
        }
        PipelineCmd::Status { id: Some(id) } => {
            let view = ops::pipeline_view(ws, &ops::parse_pipeline_id(&id)?)?;
            ctx.emit(&view, render_view)?;
        }
        PipelineCmd::Branch {
            id,
            design_record_id,
            branches,
        } => {
            let m = ops::branch(
                ws,
                &ops::parse_pipeline_id(&id)?,
                &ops::BranchRequest {
                    design_record_id,
                    branches,
                },
            )?;
            ctx.emit(&m, |m| format!("Created branches: {}", m.result.branches.join(", ")))?;
        }
    }
    Ok(EXIT_OK)
}

fn ask_confirmation(ctx: &mut Ctx<'_, '_>, warnings: &[Notice]) -> OpResult<bool> {
    let Some(input) = ctx.io.input.as_mut() else {
        return Err(OpError::new(
            ErrorClass::Conflict,
            "CONFIRMATION_REQUIRED",
            "sprint-scale pipeline has branches without an auditor; pass --yes to close anyway",
        ));
    };
    for w in warnings {
        let _ = writeln!(ctx.io.err, "warning: {}: {}", w.code, w.message);
    }
    let _ = write!(ctx.io.err, "Close anyway? [y/N] ");
    let _ = ctx.io.err.flush();
    let mut answer = String::new();
    input.read_line(&mut answer).map_err(io_failure)?;
    Ok(matches!(answer.trim().to_ascii_lowercase().as_str(), "y" | "yes"))
}

fn render_view(v: &ops::PipelineView) -> String {
    let p = &v.pipeline;
    let mut s = format!(
        "{}  scale={}  status={}  revision={}\n\n",
        p.id,
        p.scale,
        format!("{:?}", p.status).to_lowercase(),
        p.revision
    );
    let mut headers = vec!["Branch"];
    headers.extend(Stage::ALL.iter().map(|st| st.name()));
    let rows = v
        .lanes
        .iter()
        .map(|lane| {
            let mut row = vec![lane.branch_id.clone()];
            row.extend(lane.stages.iter().map(|c| {
                let status = format!("{:?}", c.status).to_lowercase();
                match &c.record_id {
                    Some(r) if c.inherited => format!("{r} {status} (inherited)"),
                    Some(r) => format!("{r} {status}"),
                    None => status,
                }
            }));
            row
        })
        .collect();
    s.push_str(&table(&headers, rows));
    if !p.findings.is_empty() {
        s.push('\n');
        s.push_str(&table(
            &["Finding", "Severity", "Category", "Routed to", "Record"],
            p.findings
                .iter()
                .map(|f| {
                    vec![
                        f.finding.finding_id.clone(),
                        format!("{:?}", f.finding.severity),
                        format!("{:?}", f.finding.category),
                        f.target_stage.to_string(),
                        f.routed_record_id.clone().unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect(),
        ));
    }
    if let Some(b) = &v.close_blocker {
        s.push_str(&format!("\ncannot close: {b}\n"));
    }
    for w in &v.close_warnings {
        s.push_str(&format!("\nclose warning: {}: {}", w.code, w.message));
    }
    s
}

fn stage(ctx: &mut Ctx<'_, '_>, ws: &Workspace, cmd: StageCmd) -> OpResult<()> {
    match cmd {
        StageCmd::Begin {
            id,
            stage,
            tool,
            tool_type,
            mechanism,
            package,
            branch,
        } => {
            let req = ops::BeginStageRequest {
                stage,
                tool,
                tool_type: parse_from_str(&tool_type).map_err(|e| OpError::invalid("BAD_REQUEST", e))?,
                context_mechanism: mechanism,
                package_id: package,
                branch,
            };
            let m = ops::begin_stage(ws, &ops::parse_pipeline_id(&id)?, &req)?;
            ctx.notices(&m.notices);
            ctx.emit(&m, |m| {
                format!("Opened {}: {} on branch '{}'", m.result.record_id, m.result.stage, m.result.branch_id)
            })?;
        }
        StageCmd::Complete {
            id,
            record,
            artifact,
            pattern,
        } => {
            let req: ops::CompleteStageRequest = ops::decode(serde_json::json!({
                "output_artifact": artifact,
                "cross_tool_pattern": pattern,
            }))?;
            let m = ops::complete_stage(ws, &ops::parse_pipeline_id(&id)?, &record, &req)?;
            ctx.emit(&m, |m| format!("Completed {}: {}", m.result.record_id, m.result.stage))?;
        }
        StageCmd::Skip {
            id,
            stage,
            reason,
            branch,
        } => {
            let m = ops::skip_stage(ws, &ops::parse_pipeline_id(&id)?, &ops::SkipStageRequest { stage, reason, branch })?;
            ctx.notices(&m.notices);
            ctx.emit(&m, |m| {
                format!("Waived {} on branch '{}' ({})", m.result.stage, m.result.branch_id, m.result.record_id)
            })?;
        }
    }
    Ok(())
}

fn findings_text(findings: &[PackageFinding]) -> String {
    if findings.is_empty() {
        return "no findings".into();
    }
    findings
        .iter()
        .map(|f| format!("{}: {}: {}", f.severity, f.code, f.message))
        .collect::<Vec<_>>()
        .join("\n")
}

fn package(ctx: &mut Ctx<'_, '_>, root: &Path, cmd: PackageCmd) -> OpResult<i32> {
    match cmd {
        PackageCmd::Add { manifest } => {
            let ws = open_ws(root)?;
            let pkg = ops::parse_manifest(&read_file(&manifest)?)?;
            let m = ops::add_package(&ws, pkg)?;
            ctx.emit(&m, |m| {
                let verb = if m.result.attached { "Attached" } else { "Already attached:" };
                format!(
                    "{verb} {} to {} ({} tokens, {})\n{}",
                    m.result.package_id,
                    m.result.pipeline_id,
                    m.result.report.total_tokens,
                    m.result.report.size_class.name(),
                    findings_text(&m.result.report.findings)
                )
            })?;
        }
        PackageCmd::Validate { manifest } => {
            let report = ops::package_report(&ops::parse_manifest(&read_file(&manifest)?)?);
            ctx.emit(&report, |r| {
                format!(
                    "{}: {} tokens, {}\n{}",
                    r.package_id,
                    r.total_tokens,
                    r.size_class.name(),
                    findings_text(&r.findings)
                )
            })?;
            if report.has_errors() {
                return Ok(EXIT_FAILURE);
            }
        }
        PackageCmd::Resolve {
            manifest,
            pipeline,
            package,
            a,
            b,
        } => {
            let resolution = match manifest {
                Some(path) => ops::resolve_in(&ops::parse_manifest(&read_file(&path)?)?, &a, &b)?,
                None => {
                    let ws = open_ws(root)?;
                    let req = ops::ResolveRequest {
                        manifest: None,
                        pipeline_id: pipeline,
                        package_id: package,
                        a,
                        b,
                    };
                    ops::resolve(Some(&ws), req)?
                }
            };
            ctx.emit(&resolution, |r| match &r.winner {
                Some(w) => format!("winner: {w}\n{}", r.rationale),
                None => format!("operator decision required\n{}", r.rationale),
            })?;
        }
        PackageCmd::Classify(args) => {
            let req = match (args.tokens, args.manifest, args.file) {
                (Some(t), _, _) => ops::ClassifyRequest {
                    tokens: Some(t),
                    ..Default::default()
                },
                (_, Some(m), _) => ops::ClassifyRequest {
                    manifest: Some(serde_json::Value::String(read_file(&m)?)),
                    ..Default::default()
                },
                (_, _, Some(f)) => {
                    let bytes = fs::read(&f).map_err(|e| OpError::invalid("IO_ERROR", format!("{}: {e}", f.display())))?;
                    ops::ClassifyRequest {
                        tokens: Some(ctxpipe_core::roles::estimate_tokens(&bytes)),
                        ..Default::default()
                    }
                }
                _ => unreachable!("clap enforces one source"),
            };
            let c = ops::classify(req)?;
            ctx.emit(&c, |c| format!("{} ({} tokens)", c.size_class.name(), c.total_tokens))?;
        }
    }
    Ok(EXIT_OK)
}

fn template(ctx: &mut Ctx<'_, '_>, root: &Path, cmd: TemplateCmd) -> OpResult<i32> {
    match cmd {
        TemplateCmd::List => {
            let types = ops::list_types(&open_ws(root)?)?;
            ctx.emit(&types, |types| {
                table(
                    &["Type", "Source", "Stages", "Evidence"],
                    types
                        .iter()
                        .map(|t| {
                            vec![
                                t.name.clone(),
                                if t.builtin { "built-in" } else { "workspace" }.into(),
                                t.stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
                                t.evidence_note.clone(),
                            ]
                        })
                        .collect(),
                )
            })?;
        }
        TemplateCmd::Export { type_name, out } => {
            let ws = open_ws(root)?;
            let exported = match out {
                None => ops::export_templates(&ws, &type_name)?,
                Some(dir) => {
                    let docs = ops::get_templates(&ws, &type_name)?;
                    write_docs(&dir, &docs).map(|paths| ops::Exported { type_name, paths })?
                }
            };
            ctx.emit(&exported, |e| e.paths.join("\n"))?;
        }
        TemplateCmd::Validate { file } => {
            let report = ops::validate_template_text(&read_file(&file)?)?;
            ctx.emit(&report, |r| findings_text(&r.findings))?;
            if !report.valid {
                return Ok(EXIT_FAILURE);
            }
        }
        TemplateCmd::Instantiate {
            type_name,
            project,
            domain,
            date,
            overrides,
            out,
        } => {
            let ws = open_ws(root)?;
            let req = ops::InstantiateRequest {
                type_name,
                project,
                domain,
                date,
                overrides: overrides.into_iter().collect::<BTreeMap<_, _>>(),
            };
            let (result, _) = ops::instantiate(&ws, &req)?;
            match out {
                Some(dir) => {
                    let paths = write_docs(&dir, &result.templates)?;
                    ctx.emit(&paths, |p| p.join("\n"))?;
                }
                None => ctx.emit(&result, |r| {
                    r.templates.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n")
                })?,
            }
        }
    }
    Ok(EXIT_OK)
}

fn write_docs(dir: &Path, docs: &[ops::TemplateDoc]) -> OpResult<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| OpError::invalid("IO_ERROR", format!("{}: {e}", dir.display())))?;
    docs.iter()
        .map(|d| {
            let path = dir.join(format!("{}.md", d.stage.slug()));
            fs::write(&path, &d.text).map_err(|e| OpError::invalid("IO_ERROR", format!("{}: {e}", path.display())))?;
            Ok(path.display().to_string())
        })
        .collect()
}

fn dataset(ctx: &mut Ctx<'_, '_>, ws: &Workspace, cmd: DatasetCmd) -> OpResult<()> {
    match cmd {
        DatasetCmd::Import { path, name } => {
            let name = name
                .or_else(|| path.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .ok_or_else(|| OpError::invalid("BAD_NAME", "cannot derive a dataset name; pass --name"))?;
            let ds = read_dataset_source(&path)?;
            let imported = ops::import_dataset(ws, &name, ds)?;
            if ctx.format == Format::Human {
                for l in &imported.lints {
                    let _ = writeln!(ctx.io.err, "lint: {}: {}", l.code, l.message);
                }
            }
            ctx.emit(&imported, |i| format!("Imported {} records as '{}'", i.records, i.name))?;
        }
        DatasetCmd::List => {
            let list = ops::list_datasets(ws)?;
            ctx.emit(&list, |l| {
                table(
                    &["Dataset", "Records"],
                    l.iter().map(|d| vec![d.name.clone(), d.records.to_string()]).collect(),
                )
            })?;
        }
        DatasetCmd::Report { name, kind, group_by } => {
            let report = ops::dataset_report(
                ws,
                &ops::ReportRequest {
                    dataset: name,
                    kind,
                    group_by,
                },
            )?;
            ctx.emit(&report, render_report)?;
        }
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{v:.1}%")
}

fn render_report(r: &Report) -> String {
    match r {
        Report::Quality { table: t, .. } => table(
            &["Group", "N", "First-pass", "Iterated", "Partial", "Failed", "Final success", "Avg iterations"],
            t.rows
                .iter()
                .map(|row| {
                    vec![
                        row.group.clone(),
                        row.total.to_string(),
                        format!("{} ({})", row.first_pass_count, pct(row.first_pass_pct)),
                        format!("{} ({})", row.iterated_count, pct(row.iterated_pct)),
                        format!("{} ({})", row.partial_count, pct(row.partial_pct)),
                        format!("{} ({})", row.failed_count, pct(row.failed_pct)),
                        format!("{} ({})", row.final_success_count, pct(row.final_success_pct)),
                        format!("{}{:.1}", if row.avg_is_lower_bound { ">=" } else { "" }, row.avg_iterations),
                    ]
                })
                .collect(),
        ),
        Report::Authority { rows, .. } => table(
            &["Authority", "N", "First-pass"],
            rows.iter()
                .map(|row| {
                    vec![
                        row.authority_type.name().to_string(),
                        row.count.to_string(),
                        row.first_pass_pct
                            .map_or_else(|| "-".to_string(), |p| format!("{} ({})", row.first_pass_count, pct(p))),
                    ]
                })
                .collect(),
        ),
        Report::Size { table: t, .. } => {
            let mut s = table(
                &["Size class", "N", "Avg iterations", "First-pass"],
                t.rows
                    .iter()
                    .map(|row| {
                        vec![
                            row.size_class.name().to_string(),
                            row.count.to_string(),
                            format!("{:.1}", row.avg_iterations),
                            format!("{} ({})", row.first_pass_count, pct(row.first_pass_pct)),
                        ]
                    })
                    .collect(),
            );
            if t.unclassified > 0 {
                s.push_str(&format!("\n{} records have no context_tokens and are not classified\n", t.unclassified));
            }
            s
        }
        Report::Stages { presence, .. } => table(
            &["Stage", "Present in"],
            presence.iter().map(|(s, p)| vec![s.to_string(), pct(*p)]).collect(),
        ),
    }
}

fn format_number(v: f64, decimals: Option<usize>) -> String {
    match decimals {
        Some(d) => {
            // Half-up on the decimal reading, so 0.7975 prints as 0.798.
            let scale = 10f64.powi(d as i32);
            let scaled = v * scale;
            let rounded = (scaled + scaled.signum() * 1e-9).round() / scale;
            format!("{rounded:.d$}")
        }
        None => {
            let s = format!("{v:.10}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" { "0".into() } else { s.to_string() }
        }
    }
}

fn estimate(ctx: &mut Ctx<'_, '_>, cmd: EstimateCmd) -> OpResult<()> {
    let (req, decimals) = match cmd {
        EstimateCmd::Lp(a) => (ops::EstimateRequest::Lp { n1: a.n1, n2: a.n2, m: a.m }, a.out.decimals),
        EstimateCmd::Chapman(a) => (ops::EstimateRequest::Chapman { n1: a.n1, n2: a.n2, m: a.m }, a.out.decimals),
        EstimateCmd::Nversion { p, out } => (ops::EstimateRequest::Nversion { p }, out.decimals),
        EstimateCmd::Ib { i_xt, i_ty, beta, out } => (ops::EstimateRequest::Ib { i_xt, i_ty, beta }, out.decimals),
        EstimateCmd::Boehm { c0, phase, out } => (ops::EstimateRequest::Boehm { c0, phase }, out.decimals),
        EstimateCmd::Wright { c1, n, rate, out } => (ops::EstimateRequest::Wright { c1, n, rate }, out.decimals),
    };
    let e = ops::estimate(&req)?;
    ctx.emit(&e, |e| format_number(e.value, decimals))
}

fn trail(ctx: &mut Ctx<'_, '_>, ws: &Workspace, cmd: TrailCmd) -> OpResult<i32> {
    match cmd {
        TrailCmd::Render { id, out } => {
            let id: PipelineId = ops::parse_pipeline_id(&id)?;
            let text = ops::trail_render(ws, &id)?;
            match out {
                Some(path) => {
                    fs::write(&path, &text).map_err(|e| OpError::invalid("IO_ERROR", format!("{}: {e}", path.display())))?;
                    ctx.emit(&serde_json::json!({"path": path.display().to_string()}), |_| {
                        format!("Wrote {}", path.display())
                    })?;
                }
                None => match ctx.format {
                    Format::Human => ctx.io.out.write_all(text.as_bytes()).map_err(io_failure)?,
                    Format::Structured => ctx.emit(&ops::trail_events(ws, &id)?, |_| String::new())?,
                },
            }
        }
        TrailCmd::Verify { id } => {
            let v = ops::trail_verify(ws, &ops::parse_pipeline_id(&id)?)?;
            ctx.emit(&v, |v| match v {
                Verification::Ok { events } => format!("OK: {events} events, chain intact"),
                Verification::Broken { at_seq, reason } => format!("BROKEN at seq {at_seq}: {reason}"),
            })?;
            if !v.is_ok() {
                return Ok(EXIT_FAILURE);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Plain left-aligned text table.
pub fn table(headers: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(headers.to_vec())];
    out.push(line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in &rows {
        out.push(line(row.iter().map(String::as_str).collect()));
    }
    out.join("\n") + "\n"
}
