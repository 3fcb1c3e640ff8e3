use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cugro::continual::{parse_csv, ReplayVariant};
use cugro_cli::commands::{self, Overrides};
use cugro_cli::config::ExperimentConfig;
use cugro_cli::plot::{plot_files, render_svg, Series};
use cugro_cli::CliError;

const TINY: &str = r#"
[data]
transitions = 100
horizon = 20
qualities = ["expert"]
train_quality = "expert"

[[tasks]]
family = "DirReward"
degrees = 0.0

[[tasks]]
family = "DirReward"
degrees = 120.0

[sequence]
seed = 3

[sequence.schedule]
steps = 10

[sequence.state_net]
widths = [16, 16]
time_dim = 8

[sequence.behavior_net]
widths = [16, 16]
time_dim = 8

[sequence.critic]
hidden = [16, 16]

[sequence.train]
batch_size = 32
generator_epochs = 1
critic_epochs = 1
value_actions = 2
value_sampler_steps = 4
replay_sampler_steps = 4
replay_samples = 40

[sequence.eval]
episodes = 2
sampler_steps = 4

[sequence.eval.policy]
candidates = 3
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY, Path::new("tiny.toml")).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn cugro(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cugro"))
        .args(args)
        .env("CUGRO_OUT", out)
        .output()
        .unwrap()
}

fn sink() -> Vec<u8> {
    Vec::new()
}

#[test]
fn config_echo_reparses_to_equal_structure() {
    for cfg in [ExperimentConfig::default(), tiny()] {
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse(&text, Path::new("echo.toml")).unwrap(), cfg);
    }
    let mut custom = tiny();
    custom.sequence.variant = ReplayVariant::Noise;
    custom.sequence.train.value_mode = cugro::critic::ValueMode::Reweighted { alpha: 2.5 };
    custom.sequence.lambda = 0.1;
    let text = custom.to_toml();
    assert_eq!(ExperimentConfig::parse(&text, Path::new("echo.toml")).unwrap(), custom);
}

#[test]
fn unknown_keys_and_families_are_rejected() {
    let err = ExperimentConfig::parse("[sequence]\nlamda = 2.0\n", Path::new("x.toml")).unwrap_err();
    assert!(err.to_string().contains("lamda"), "{err}");
    assert_eq!(err.exit_code(), 2);

    let bad_family = "[[tasks]]\nfamily = \"SpinReward\"\nparams = [1.0]\n";
    let err = ExperimentConfig::parse(bad_family, Path::new("x.toml")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("tasks[0].family") && msg.contains("SpinReward"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[paths]\nbogus = 1\n");
    let out = cugro(&["collect", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn collect_writes_one_file_per_task_and_is_reproducible() {
    let text = TINY.replace(
        "degrees = 120.0",
        "degrees = 120.0\n\n[[tasks]]\nfamily = \"DirReward\"\ndegrees = 240.0",
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_path = write_config(a.path(), &text);
    for root in [a.path(), b.path()] {
        let out = cugro(
            &["collect", "--config", cfg_path.to_str().unwrap(), "--seed", "9"],
            root,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let data = a.path().join("data");
    let mut files: Vec<String> = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".cgd"))
        .collect();
    files.sort();
    assert_eq!(files, ["task1_expert.cgd", "task2_expert.cgd", "task3_expert.cgd"]);
    let manifest = std::fs::read_to_string(data.join("collection.manifest")).unwrap();
    assert!(manifest.contains("files=3"));
    assert!(manifest.contains("seed=9"));
    assert_eq!(manifest.matches(".transitions=100").count(), 3);
    for f in &files {
        let x = std::fs::read(data.join(f)).unwrap();
        let y = std::fs::read(b.path().join("data").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn train_reports_missing_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let err = commands::train(&tiny(), dir.path(), false, &mut sink()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(
        msg.contains("task1_expert.cgd") && msg.contains("task2_expert.cgd"),
        "{msg}"
    );

    let cfg = write_config(dir.path(), TINY);
    let out = cugro(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_and_rerun_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    commands::collect(&cfg, dir.path(), &mut sink()).unwrap();
    let first = commands::train(&cfg, dir.path(), false, &mut sink()).unwrap();
    let csv_path = first.run_dir.join("metrics.csv");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows = parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.variant == ReplayVariant::Diffusion && r.seed == 3));

    let echoed = std::fs::read_to_string(first.run_dir.join("config.toml")).unwrap();
    assert_eq!(ExperimentConfig::parse(&echoed, Path::new("config.toml")).unwrap(), cfg);

    commands::train(&cfg, dir.path(), false, &mut sink()).unwrap();
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), csv);

    let resumed = commands::train(&cfg, dir.path(), true, &mut sink()).unwrap();
    assert_eq!(resumed.metrics, first.metrics);

    let a = commands::eval(&first.run_dir, None, &mut sink()).unwrap();
    let b = commands::eval(&first.run_dir, None, &mut sink()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    for (row, trained) in a.iter().zip(&rows[1..]) {
        assert_eq!(row.mean_return, trained.mean_return);
        assert_eq!(row.forgetting, trained.forgetting);
    }
    let mut log = sink();
    commands::eval(&first.run_dir, Some(3), &mut log).unwrap();
    assert!(String::from_utf8(log)
        .unwrap()
        .contains("cumulative average over 2 tasks"));

    let out = cugro(&["eval", first.run_dir.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("task 2: mean return"));
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = commands::eval(dir.path(), None, &mut sink()).unwrap_err();
    assert!(matches!(err, CliError::MissingCheckpoint(_)));
    let out = cugro(&["eval", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn lambda_sweep_creates_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.tasks.truncate(1);
    commands::collect(&cfg, dir.path(), &mut sink()).unwrap();
    let dirs = commands::sweep(&cfg, dir.path(), &Overrides::default(), &mut sink()).unwrap();
    assert_eq!(dirs.len(), 4);
    let mut names: Vec<String> = dirs
        .iter()
        .map(|d| d.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "diffusion-l0.1-b1-s0",
            "diffusion-l1-b1-s0",
            "diffusion-l10-b1-s0",
            "diffusion-l100-b1-s0"
        ]
    );
    for d in &dirs {
        assert!(d.join("metrics.csv").exists());
        assert!(d.join("manifest").exists());
    }
    let narrowed = Overrides {
        lambda: Some(1.0),
        ..Overrides::default()
    };
    assert_eq!(
        commands::sweep(&cfg, dir.path(), &narrowed, &mut sink()).unwrap().len(),
        1
    );
}

#[test]
fn overrides_are_validated() {
    let mut cfg = tiny();
    let bad = Overrides {
        lambda: Some(-1.0),
        ..Overrides::default()
    };
    assert_eq!(bad.apply(&mut cfg).unwrap_err().exit_code(), 2);
    let out = cugro(&["train", "--variant", "replayish"], Path::new("."));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_kind() {
    let numeric = CliError::Core(cugro::Error::Sampling {
        step: 3,
        context: "x".into(),
    });
    assert_eq!(numeric.exit_code(), 4);
    assert_eq!(CliError::Core(cugro::Error::NonFinite("loss".into())).exit_code(), 4);
    assert_eq!(CliError::Core(cugro::Error::Config("x".into())).exit_code(), 2);
    assert_eq!(CliError::MissingData(vec![PathBuf::from("a")]).exit_code(), 3);
}

const HEADER: &str = "phase,task,mean_return,std_return,forgetting,variant,seed,lambda,beta";

#[test]
fn plot_rejects_empty_and_malformed_tables() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(plot_files(std::slice::from_ref(&empty), dir.path()).is_err());
    std::fs::write(&empty, format!("{HEADER}\n")).unwrap();
    assert!(plot_files(&[empty], dir.path()).is_err());

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        format!("{HEADER}\n1,1,5.0,0.1,0.0,none,0,1.0,1.0\n2,1,oops,0.1,0.0,none,0,1.0,1.0\n"),
    )
    .unwrap();
    let err = plot_files(std::slice::from_ref(&bad), dir.path()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert_eq!(err.exit_code(), 3);
    let out = cugro(
        &["plot", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn plots_have_one_polyline_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("diffusion.csv");
    let b = dir.path().join("none.csv");
    std::fs::write(&a, format!("{HEADER}\n1,1,5.0,0.1,0.0,diffusion,0,1.0,1.0\n2,1,4.5,0.1,0.5,diffusion,0,1.0,1.0\n2,2,6.0,0.1,0.0,diffusion,0,1.0,1.0\n")).unwrap();
    std::fs::write(&b, format!("{HEADER}\n1,1,5.0,0.1,0.0,none,0,1.0,1.0\n2,1,-1.0,0.1,6.0,none,0,1.0,1.0\n2,2,6.0,0.1,0.0,none,0,1.0,1.0\n")).unwrap();

    let out_dir = dir.path().join("plots");
    let written = plot_files(std::slice::from_ref(&a), &out_dir).unwrap();
    assert_eq!(written.len(), 2);
    let svg = std::fs::read_to_string(out_dir.join("mean_return.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 1);

    let out = cugro(
        &[
            "plot",
            a.to_str().unwrap(),
            b.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["mean_return.svg", "forgetting.svg"] {
        let svg = std::fs::read_to_string(out_dir.join(name)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2, "{name}");
        assert!(
            svg.contains(">diffusion</text>") && svg.contains(">none</text>"),
            "{name}"
        );
    }
}

#[test]
fn single_point_series_still_renders() {
    let svg = render_svg(
        "t",
        "y",
        &[Series {
            label: "a<b".into(),
            points: vec![(1.0, 2.0)],
        }],
    );
    assert!(svg.contains("a&lt;b"));
    assert!(!svg.contains("NaN"));
}

#[test]
fn shipped_desk_config_matches_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = ExperimentConfig::load(Some(&path)).unwrap();
    assert_eq!(cfg.sequence, cugro::continual::SequenceConfig::desk());
    assert_eq!(cfg.tasks.len(), 3);
    assert_eq!(cfg.sweep.variants, ReplayVariant::ALL.to_vec());
}
