//! End-to-end tests of the `popsim` binary: exit codes, output formats, and
//! byte-reproducibility of sweep files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn popsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("popsim-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_pairwise_elimination_two_agents() {
    let output = popsim(&[
        "run", "--protocol", "builtin:elim", "--n", "2", "--stop", "single-leader", "--seed", "7",
    ]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("interactions: 1"), "{text}");
    assert!(text.contains("stop_reason: leader_count"), "{text}");
    assert!(text.contains("rng chacha8"), "{text}");
}

#[test]
fn run_zero_calls_keeps_the_initial_configuration() {
    let output = popsim(&[
        "run", "--protocol", "builtin:ladder?m=1", "--n", "5", "--stop", "calls:0",
    ]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("final: s0=5"));
}

#[test]
fn run_missing_protocol_file_is_a_usage_error() {
    let output = popsim(&["run", "--protocol", "no/such/file.pp", "--n", "2"]);
    assert_eq!(code(&output), 2);
    assert!(!output.stderr.is_empty());
}

#[test]
fn run_audit_requires_agents_mode() {
    let output = popsim(&[
        "run", "--protocol", "builtin:ladder?m=2", "--n", "4", "--stop", "calls:10", "--audit", "s1",
    ]);
    assert_eq!(code(&output), 2);
    let output = popsim(&[
        "run", "--protocol", "builtin:ladder?m=2", "--n", "4", "--mode", "agents",
        "--stop", "state:s1", "--audit", "s1", "--seed", "3",
    ]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("distinct_visitors[s1]: 1"));
}

#[test]
fn run_writes_an_event_trace() {
    let dir = temp_dir("trace");
    let trace = dir.join("events.log");
    let output = popsim(&[
        "run", "--protocol", "builtin:elim", "--n", "3", "--stop", "single-leader",
        "--seed", "1", "--trace", trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    // every line is `<call> noop` or `<call> <a> <b> -> <c> <d>`
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert!(fields[0].parse::<u64>().is_ok(), "bad line {line}");
        match fields.len() {
            2 => assert_eq!(fields[1], "noop"),
            6 => assert_eq!(fields[3], "->"),
            other => panic!("unexpected field count {other} in {line}"),
        }
    }
    assert!(text.lines().any(|l| l.contains("L L -> L F")));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn layers_of_the_ladder() {
    let output = popsim(&["layers", "--protocol", "builtin:ladder?m=4", "--start", "s0"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("l_max: 3"));
    assert!(text.contains("reachable states: 4"));
    assert!(text.contains("F_1 adds: s1 via (s0, s0) initiator"));
}

#[test]
fn layers_of_the_leader_election_protocol() {
    let output = popsim(&[
        "layers", "--protocol", "builtin:protocol1?k=2", "--start", "L1_T0_TS0_TR0_C0",
    ]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    // the first layer reaches the timer state
    let f1 = text.lines().find(|l| l.starts_with("F_1 adds:")).unwrap();
    assert!(f1.contains("L0_T1_TS0_TR0_C0"), "{f1}");
}

#[test]
fn layers_identity_protocol_has_a_single_layer() {
    let output = popsim(&["layers", "--protocol", "builtin:ladder?m=1"]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("l_max: 0"));
}

#[test]
fn layers_unknown_start_state() {
    let output = popsim(&["layers", "--protocol", "builtin:ladder?m=2", "--start", "zz"]);
    assert_eq!(code(&output), 2);
}

#[test]
fn bounds_two_state_chain() {
    let output = popsim(&["bounds", "--protocol", "builtin:ladder?m=2"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("T_calls coefficient: 1/8"), "{text}");
    assert!(text.contains("5.49316406250e-4"), "{text}");
    assert!(text.contains("n >= 1821"), "{text}");
}

#[test]
fn bounds_deep_chain_flags_states_below_one_agent() {
    let output = popsim(&["bounds", "--protocol", "builtin:ladder?m=4", "--n", "1000000"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("below 1 expected agent"), "{text}");
}

#[test]
fn bounds_single_state_chain_is_empty() {
    let output = popsim(&["bounds", "--protocol", "builtin:ladder?m=1"]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("T_calls coefficient: 0"), "{text}");
    assert!(!text.contains("window"), "{text}");
}

#[test]
fn check_stable_and_unstable_configurations() {
    let output = popsim(&["check", "--protocol", "builtin:ladder?m=1", "--n", "5"]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("stable"));

    // a split-output protocol from a DSL file: one transition breaks the consensus
    let dir = temp_dir("check");
    let path = dir.join("split.pp");
    std::fs::write(&path, "states A B\noutput A=1 B=0\nA A -> B A\n").unwrap();
    let output = popsim(&[
        "check", "--protocol", path.to_str().unwrap(), "--counts", "A=3",
    ]);
    assert_eq!(code(&output), 0);
    let text = stdout(&output);
    assert!(text.contains("unstable (witness path of 1 transitions)"), "{text}");
    assert!(text.contains("A=3"), "{text}");
    assert!(text.contains("A=2 B=1"), "{text}");
    // unstable is an exit-1 verdict under --strict
    let output = popsim(&[
        "check", "--protocol", path.to_str().unwrap(), "--counts", "A=3", "--strict",
    ]);
    assert_eq!(code(&output), 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn check_limit_exceeded() {
    let output = popsim(&[
        "check", "--protocol", "builtin:ladder?m=4", "--n", "50", "--max-configs", "10",
    ]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("limit-exceeded"));
    let output = popsim(&[
        "check", "--protocol", "builtin:ladder?m=4", "--n", "50", "--max-configs", "10", "--strict",
    ]);
    assert_eq!(code(&output), 1);
}

#[test]
fn protocols_list_and_emit_round_trip() {
    let output = popsim(&["protocols", "list"]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("builtin:elim"));

    let output = popsim(&["protocols", "emit", "builtin:protocol1?k=2"]);
    assert_eq!(code(&output), 0);
    let dir = temp_dir("emit");
    let path = dir.join("protocol1.pp");
    std::fs::write(&path, stdout(&output)).unwrap();
    // the emitted text is a working protocol definition
    let output = popsim(&[
        "run", "--protocol", path.to_str().unwrap(), "--n", "2",
        "--stop", "single-leader", "--seed", "7",
    ]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("interactions: 1"));
    std::fs::remove_dir_all(&dir).ok();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn sweep_writes_schema_files_reproducibly() {
    let dir = temp_dir("sweep");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out, workers) in [(&out_a, "1"), (&out_b, "2")] {
        let output = popsim(&[
            "sweep", "--preset", "fig3.1", "--n-values", "4,8,16", "--runs-per-n", "3",
            "--seed", "9", "--workers", workers, "--out", out.to_str().unwrap(), "--chart",
        ]);
        assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    }
    let csv = read(&out_a, "final_leaders.csv");
    assert!(csv.starts_with(
        "protocol,variant,k,n,run,seed,calls,interactions,final_leaders,stop_reason\n"
    ));
    assert_eq!(csv.lines().count(), 1 + 2 * 9);
    assert!(csv.contains(",base,") && csv.contains(",improved,"));
    // identical master seed, different worker count: byte-identical files
    assert_eq!(csv, read(&out_b, "final_leaders.csv"));
    assert_eq!(read(&out_a, "fits.csv"), read(&out_b, "fits.csv"));
    let chart = read(&out_a, "final_leaders_base.svg");
    assert!(chart.starts_with("<svg"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_paper_scale_uses_the_dense_single_run_schedule() {
    let dir = temp_dir("paper");
    let output = popsim(&[
        "sweep", "--preset", "fig5.1", "--paper-scale", "--n-max", "210",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let csv = read(&dir, "max_counter.csv");
    // schedule 10 + 50m bounded above, one run per population size
    let ns: Vec<u64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ns, vec![10, 60, 110, 160, 210]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_spec_file_with_flag_overrides() {
    let dir = temp_dir("specfile");
    let spec = dir.join("sweep.toml");
    std::fs::write(
        &spec,
        "preset = \"stabilization\"\nprotocol = \"builtin:elim\"\nn_values = [2, 4]\nruns_per_n = 2\nmaster_seed is invalid",
    )
    .unwrap();
    let output = popsim(&["sweep", "--spec-file", spec.to_str().unwrap()]);
    assert_eq!(code(&output), 2, "malformed TOML is a usage error");
    std::fs::write(
        &spec,
        "preset = \"stabilization\"\nprotocol = \"builtin:elim\"\nn_values = [2, 4]\nruns_per_n = 2\nseed = 5\n",
    )
    .unwrap();
    let output = popsim(&[
        "sweep", "--spec-file", spec.to_str().unwrap(), "--runs-per-n", "3",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let csv = read(&dir, "stabilization.csv");
    // the flag overrides the file's runs_per_n
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_strict_gates_on_flagged_rows() {
    // the ladder never reaches a single output-1 agent, so every row caps
    let dir = temp_dir("strict");
    let args_base = [
        "sweep", "--preset", "stabilization", "--protocol", "builtin:ladder?m=2",
        "--n-values", "4", "--runs-per-n", "2", "--out",
    ];
    let mut args: Vec<&str> = args_base.to_vec();
    let out = dir.to_str().unwrap();
    args.push(out);
    let output = popsim(&args);
    assert_eq!(code(&output), 0, "flagged rows alone are not an error");
    args.push("--strict");
    let output = popsim(&args);
    assert_eq!(code(&output), 1);
    let csv = read(&dir, "stabilization.csv");
    assert!(csv.contains(",cap"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn help_lists_flags_for_every_subcommand() {
    for sub in ["run", "sweep", "layers", "bounds", "check", "protocols"] {
        let output = popsim(&[sub, "--help"]);
        assert_eq!(code(&output), 0);
        let text = stdout(&output);
        assert!(text.contains("--help"), "{sub} help missing flags");
        if sub != "protocols" {
            assert!(text.contains("--protocol"), "{sub} help missing --protocol");
        }
    }
}
