//! Scenario runner: one subcommand per study, reproducible seeding, and
//! figure-ready CSV/JSON outputs plus a run manifest.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use uavsim::cellfree::{run_cf_study, CfMix, CfStudyConfig};
use uavsim::channel::{composite_bs_gain_dbi, direction_to_local, AntennaConfig};
use uavsim::config::IniConfig;
use uavsim::mmimo::{run_mmimo_study, CsiQuality, MmimoMode, MmimoStudyConfig};
use uavsim::mobility::{
    default_mobility_grid, evaluate_policy, greedy_policy, q_learn, QlHyper, RewardWeights, N_DIRS,
};
use uavsim::scenario::derive_rng;
use uavsim::stats::{CdfSummary, SCHEMA_VERSION};
use uavsim::thz::{rate_vs_distance_sweep, BandConfig};
use uavsim::u2u::{
    epsilon_sweep, rate_comparison, wobble_spectral_efficiency, SharingConfig, SharingMode,
    U2uStudyConfig, WobbleConfig,
};
use uavsim::SimError;

#[derive(Parser)]
#[command(name = "uavsim", version, about = "UAV cellular network studies")]
struct Cli {
    /// INI config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness in the run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores). Outputs do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Fixed sector-beam gain vs 2D distance for a list of user heights.
    Pattern,
    /// Massive MIMO mode comparison: SINR/rate CDFs and C2 rate fractions.
    Mmimo,
    /// Cell-free uplink combining vs the cellular baseline.
    Cellfree,
    /// UAV-to-UAV sidelink spectrum sharing and mmWave wobbling.
    U2u,
    /// RSRP map, Q-learned handover policies, and the weight trade-off.
    Mobility,
    /// LoS MIMO bit rate vs distance at 28 and 140 GHz.
    Thz,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Pattern => "pattern",
            Cmd::Mmimo => "mmimo",
            Cmd::Cellfree => "cellfree",
            Cmd::U2u => "u2u",
            Cmd::Mobility => "mobility",
            Cmd::Thz => "thz",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config(_) | SimError::Domain(_) => ExitCode::from(2),
                SimError::Numerical(_) | SimError::Io(_) => ExitCode::from(3),
            }
        }
    }
}

#[derive(Serialize)]
struct ManifestOutput {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema: &'a str,
    subcommand: &'a str,
    config_path: Option<String>,
    config_sha256: String,
    seed: u64,
    version: &'a str,
    run_id: String,
    outputs: Vec<ManifestOutput>,
    wall_clock_s: f64,
}

fn run(cli: &Cli) -> Result<(), SimError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(SimError::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
    }
    let config_text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let ini = IniConfig::parse(&config_text)?;

    // everything that determines the outputs goes into the run id
    let run_id = {
        let mut h = Sha256::new();
        h.update(cli.cmd.name());
        h.update([0]);
        h.update(&config_text);
        h.update(cli.seed.to_le_bytes());
        h.update(env!("CARGO_PKG_VERSION"));
        hex(&h.finalize())[..16].to_string()
    };

    let started = Instant::now();
    let files = match cli.cmd {
        Cmd::Pattern => cmd_pattern(&ini, &run_id)?,
        Cmd::Mmimo => cmd_mmimo(&ini, cli.seed, &run_id)?,
        Cmd::Cellfree => cmd_cellfree(&ini, cli.seed, &run_id)?,
        Cmd::U2u => cmd_u2u(&ini, cli.seed, &run_id)?,
        Cmd::Mobility => cmd_mobility(&ini, cli.seed, &run_id)?,
        Cmd::Thz => cmd_thz(&ini, &run_id)?,
    };

    std::fs::create_dir_all(&cli.out)?;
    let mut outputs = Vec::new();
    for (name, content) in &files {
        let path = cli.out.join(name);
        std::fs::write(&path, content)?;
        outputs.push(ManifestOutput {
            path: name.clone(),
            sha256: hex(&Sha256::digest(content.as_bytes())),
        });
    }
    let manifest = RunManifest {
        schema: SCHEMA_VERSION,
        subcommand: cli.cmd.name(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config_sha256: hex(&Sha256::digest(config_text.as_bytes())),
        seed: cli.seed,
        version: env!("CARGO_PKG_VERSION"),
        run_id,
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SimError::Numerical(format!("manifest serialization: {e}")))?;
    // atomic write so a crash never leaves a manifest for missing outputs
    let tmp = cli.out.join("manifest.json.tmp");
    std::fs::write(&tmp, manifest_json)?;
    std::fs::rename(&tmp, cli.out.join("manifest.json"))?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV with a schema/run header comment and a fixed column order.
fn csv(run_id: &str, columns: &str, rows: &[String]) -> String {
    let mut s = format!("# {SCHEMA_VERSION} run={run_id}\n{columns}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String, SimError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| SimError::Numerical(format!("json serialization: {e}")))
}

fn cdf_rows(prefix: &str, summary: &CdfSummary, rows: &mut Vec<String>) {
    for (value, cdf) in summary.curve(200) {
        rows.push(format!("{prefix},{value:.6},{cdf:.6}"));
    }
}

// ---------------------------------------------------------------------------
// pattern
// ---------------------------------------------------------------------------

fn cmd_pattern(ini: &IniConfig, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[
        ("pattern", "heights_m"),
        ("pattern", "d2d_max_m"),
        ("pattern", "d2d_step_m"),
        ("pattern", "bs_height_m"),
    ])?;
    let heights = ini.f64_list_or("pattern", "heights_m", &[1.5, 50.0, 75.0, 150.0])?;
    let d_max = ini.f64_or("pattern", "d2d_max_m", 2000.0)?;
    let d_step = ini.f64_or("pattern", "d2d_step_m", 10.0)?;
    let bs_h = ini.f64_or("pattern", "bs_height_m", 25.0)?;
    if d_step <= 0.0 {
        return Err(SimError::Config("d2d_step_m must be > 0".into()));
    }
    let ant = AntennaConfig::sector_8v();
    let mut rows = Vec::new();
    for &h in &heights {
        let mut d = d_step;
        while d <= d_max {
            let (theta, phi) = direction_to_local(d, 0.0, h - bs_h, 0.0);
            let gain = composite_bs_gain_dbi(&ant, theta, phi);
            rows.push(format!("{h},{d},{gain:.4}"));
            d += d_step;
        }
    }
    Ok(vec![(
        "pattern.csv".into(),
        csv(run_id, "height_m,d2d_m,gain_dbi", &rows),
    )])
}

// ---------------------------------------------------------------------------
// mmimo
// ---------------------------------------------------------------------------

fn cmd_mmimo(ini: &IniConfig, seed: u64, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[
        ("mmimo", "uav_height_m"),
        ("mmimo", "drops"),
        ("mmimo", "csi"),
        ("mmimo", "uavs_per_sector"),
    ])?;
    let height = ini.f64_or("mmimo", "uav_height_m", 300.0)?;
    let drops = ini.usize_or("mmimo", "drops", 50)?;
    let uavs = ini.usize_or("mmimo", "uavs_per_sector", 1)?;
    let csi = match ini.str_or("mmimo", "csi", "srs") {
        "srs" => CsiQuality::SrsEstimated,
        "perfect" => CsiQuality::Perfect,
        other => return Err(SimError::Config(format!("csi must be srs or perfect, got {other}"))),
    };
    let modes = [
        ("su_aauav", MmimoMode::Su),
        ("mmimo", MmimoMode::Mmimo),
        ("mmimo_aauav", MmimoMode::MmimoAaUav),
        ("mmimo_nulls", MmimoMode::MmimoNulls),
    ];
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct ModeSummary {
        mode: &'static str,
        frac_uav_above_threshold: f64,
        uav_sinr_median_db: f64,
        gue_sinr_median_db: f64,
    }
    let mut summary = Vec::new();
    for (name, mode) in modes {
        let mut cfg = MmimoStudyConfig::table_default(mode, csi, height);
        cfg.n_drops = drops;
        cfg.uavs_per_sector = uavs;
        cfg.seed = seed;
        let r = run_mmimo_study(&cfg)?;
        cdf_rows(&format!("{name},uav,sinr_db"), &r.uav_sinr_db, &mut rows);
        cdf_rows(&format!("{name},gue,sinr_db"), &r.gue_sinr_db, &mut rows);
        cdf_rows(&format!("{name},uav,rate_bps"), &r.uav_rate_bps, &mut rows);
        cdf_rows(&format!("{name},gue,rate_bps"), &r.gue_rate_bps, &mut rows);
        summary.push(ModeSummary {
            mode: name,
            frac_uav_above_threshold: r.frac_uav_above_threshold,
            uav_sinr_median_db: r.uav_sinr_db.median()?,
            gue_sinr_median_db: r.gue_sinr_db.median()?,
        });
    }
    Ok(vec![
        (
            "mmimo_cdfs.csv".into(),
            csv(run_id, "mode,entity,metric,value,cdf", &rows),
        ),
        ("mmimo_summary.json".into(), json_pretty(&summary)?),
    ])
}

// ---------------------------------------------------------------------------
// cellfree
// ---------------------------------------------------------------------------

fn cmd_cellfree(ini: &IniConfig, seed: u64, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[
        ("cellfree", "mix"),
        ("cellfree", "n_bs"),
        ("cellfree", "drops"),
        ("cellfree", "realizations"),
        ("cellfree", "tau_p"),
    ])?;
    let mix = match ini.str_or("cellfree", "mix", "uav_only") {
        "uav_only" => CfMix::UavOnly,
        "mixed" => CfMix::Mixed7Pct,
        other => return Err(SimError::Config(format!("mix must be uav_only or mixed, got {other}"))),
    };
    let mut cfg = CfStudyConfig::umi_default(mix);
    cfg.n_bs = ini.usize_or("cellfree", "n_bs", cfg.n_bs)?;
    cfg.n_drops = ini.usize_or("cellfree", "drops", cfg.n_drops)?;
    cfg.n_realizations = ini.usize_or("cellfree", "realizations", cfg.n_realizations)?;
    let tau_p = ini.usize_or("cellfree", "tau_p", 0)?;
    cfg.tau_p = (tau_p > 0).then_some(tau_p);
    cfg.seed = seed;
    let r = run_cf_study(&cfg)?;

    let mut rows = Vec::new();
    let curves = [
        ("cellular", &r.cellular),
        ("cf_mf", &r.cf_mf),
        ("cf_mmse", &r.cf_mmse),
    ];
    for (scheme, curve) in curves {
        cdf_rows(&format!("{scheme},srs"), &curve.srs, &mut rows);
        cdf_rows(&format!("{scheme},perfect"), &curve.perfect, &mut rows);
    }
    #[derive(Serialize)]
    struct CfSummary {
        scheme: &'static str,
        estimation: &'static str,
        median_sinr_db: f64,
        p5_sinr_db: f64,
    }
    let mut summary = Vec::new();
    for (scheme, curve) in curves {
        for (estimation, cdf) in [("srs", &curve.srs), ("perfect", &curve.perfect)] {
            summary.push(CfSummary {
                scheme,
                estimation,
                median_sinr_db: cdf.median()?,
                p5_sinr_db: cdf.percentile(0.05)?,
            });
        }
    }
    Ok(vec![
        (
            "cellfree_cdfs.csv".into(),
            csv(run_id, "scheme,estimation,sinr_db,cdf", &rows),
        ),
        ("cellfree_summary.json".into(), json_pretty(&summary)?),
    ])
}

// ---------------------------------------------------------------------------
// u2u
// ---------------------------------------------------------------------------

fn cmd_u2u(ini: &IniConfig, seed: u64, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[
        ("u2u", "sharing"),
        ("u2u", "eta"),
        ("u2u", "hopping"),
        ("u2u", "u2u_prbs"),
        ("u2u", "uav_height_m"),
        ("u2u", "drops"),
        ("u2u", "epsilons"),
        ("wobble", "antennas"),
        ("wobble", "delta_max_deg"),
        ("wobble", "samples"),
    ])?;
    let sharing = match ini.str_or("u2u", "sharing", "underlay") {
        "underlay" => SharingConfig {
            mode: SharingMode::Underlay {
                eta_u: ini.f64_or("u2u", "eta", 1.0)?,
            },
            hopping: ini.bool_or("u2u", "hopping", true)?,
            total_prbs: 50,
        },
        "overlay" => SharingConfig {
            mode: SharingMode::Overlay {
                u2u_prbs: ini.usize_or("u2u", "u2u_prbs", 5)?,
            },
            hopping: false,
            total_prbs: 50,
        },
        other => {
            return Err(SimError::Config(format!(
                "sharing must be underlay or overlay, got {other}"
            )))
        }
    };
    let mut base = U2uStudyConfig::uma_default(sharing);
    base.uav_height_m = ini.f64_or("u2u", "uav_height_m", base.uav_height_m)?;
    base.n_drops = ini.usize_or("u2u", "drops", base.n_drops)?;
    base.seed = seed;
    let epsilons = ini.f64_list_or(
        "u2u",
        "epsilons",
        &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    )?;

    let sweep = epsilon_sweep(&base, &epsilons)?;
    let coverage_rows: Vec<String> = sweep
        .iter()
        .map(|(e, u2u, gue)| format!("{e},{u2u:.6},{gue:.6}"))
        .collect();

    let rates = rate_comparison(
        &base,
        &[
            ("underlay_eps0.6".into(), U2uStudyConfig::full_underlay(), 0.6),
            ("underlay_eps0.8".into(), U2uStudyConfig::full_underlay(), 0.8),
            ("overlay_eps0.6".into(), U2uStudyConfig::overlay_1mhz(), 0.6),
            ("overlay_eps0.8".into(), U2uStudyConfig::overlay_1mhz(), 0.8),
        ],
    )?;

    let n_list = [2usize, 4, 8, 16, 32, 64, 128, 256];
    let deltas = ini.f64_list_or("wobble", "delta_max_deg", &[0.0, 2.0])?;
    let samples = ini.usize_or("wobble", "samples", 20_000)?;
    let mut wobble_rows = Vec::new();
    for &delta in &deltas {
        for &n in &n_list {
            let cfg = WobbleConfig::new(n, delta)?;
            let mut rng = derive_rng(seed, 0x77_0000 + n as u64);
            let se = wobble_spectral_efficiency(&cfg, 23.0, 7.0, samples, &mut rng)?;
            wobble_rows.push(format!("{delta},{n},{se:.6}"));
        }
    }

    Ok(vec![
        (
            "u2u_coverage.csv".into(),
            csv(run_id, "epsilon,u2u_coverage,gue_coverage", &coverage_rows),
        ),
        ("u2u_rates.json".into(), json_pretty(&rates)?),
        (
            "wobble.csv".into(),
            csv(run_id, "delta_max_deg,n_antennas,mean_se_bps_hz", &wobble_rows),
        ),
    ])
}

// ---------------------------------------------------------------------------
// mobility
// ---------------------------------------------------------------------------

fn cmd_mobility(ini: &IniConfig, seed: u64, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[
        ("mobility", "w_ho"),
        ("mobility", "w_rsrp"),
        ("mobility", "episodes"),
        ("mobility", "candidates"),
        ("mobility", "norm_lo_dbm"),
        ("mobility", "norm_hi_dbm"),
        ("mobility", "trajectories"),
    ])?;
    let w_ho = ini.f64_list_or("mobility", "w_ho", &[0.0, 1.0, 5.0])?;
    let w_rsrp = ini.f64_list_or("mobility", "w_rsrp", &[1.0, 9.0, 5.0])?;
    if w_ho.len() != w_rsrp.len() {
        return Err(SimError::Config("w_ho and w_rsrp must have equal length".into()));
    }
    let mut hyper = QlHyper::default();
    hyper.episodes = ini.usize_or("mobility", "episodes", 200_000)?;
    hyper.candidates = ini.usize_or("mobility", "candidates", 16)?;
    hyper.norm_lo = ini.f64_or("mobility", "norm_lo_dbm", -90.0)?;
    hyper.norm_hi = ini.f64_or("mobility", "norm_hi_dbm", -35.0)?;
    let n_traj = ini.usize_or("mobility", "trajectories", 2000)?;

    let grid = default_mobility_grid(seed)?;
    let greedy = greedy_policy(&grid);
    let greedy_eval = evaluate_policy(&grid, &greedy, n_traj, hyper.max_steps, seed ^ 0x99)?;

    let mut rows = Vec::new();
    for (&wh, &wr) in w_ho.iter().zip(&w_rsrp) {
        let weights = RewardWeights::new(wh, wr)?;
        let q = q_learn(&grid, weights, hyper, seed)?;
        let policy = q.policy();
        let eval = evaluate_policy(&grid, &policy, n_traj, hyper.max_steps, seed ^ 0x99)?;
        let mut agree = 0usize;
        for p in 0..grid.n_points() {
            for d in 0..N_DIRS {
                agree += (policy.action(p, d, grid.best_cell(p)) == grid.best_cell(p)) as usize;
            }
        }
        rows.push(format!(
            "{wh},{wr},{},{:.4},{:.4},{:.4}",
            eval.handovers.median()?,
            eval.handover_ratio.percentile(0.90)?,
            eval.rsrp_dbm.percentile(0.05)?,
            agree as f64 / (grid.n_points() * N_DIRS) as f64,
        ));
    }

    #[derive(Serialize)]
    struct MapSummary {
        grid_nx: usize,
        grid_ny: usize,
        n_cells: usize,
        edge_change_fraction: f64,
        greedy_handover_median: f64,
        greedy_rsrp_p5_dbm: f64,
    }
    let summary = MapSummary {
        grid_nx: grid.nx,
        grid_ny: grid.ny,
        n_cells: grid.n_cells,
        edge_change_fraction: grid.edge_change_fraction(),
        greedy_handover_median: greedy_eval.handovers.median()?,
        greedy_rsrp_p5_dbm: greedy_eval.rsrp_dbm.percentile(0.05)?,
    };
    Ok(vec![
        (
            "mobility.csv".into(),
            csv(
                run_id,
                "w_ho,w_rsrp,ho_median,ho_ratio_p90,rsrp_p5_dbm,greedy_agreement",
                &rows,
            ),
        ),
        ("mobility_summary.json".into(), json_pretty(&summary)?),
    ])
}

// ---------------------------------------------------------------------------
// thz
// ---------------------------------------------------------------------------

fn cmd_thz(ini: &IniConfig, run_id: &str) -> Result<Vec<(String, String)>, SimError> {
    ini.check_known(&[("thz", "distances_m")])?;
    let distances = ini.f64_list_or(
        "thz",
        "distances_m",
        &[10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0],
    )?;
    let bands = [BandConfig::mmwave_28(), BandConfig::subthz_140()];
    let rows: Vec<String> = rate_vs_distance_sweep(&bands, &distances)?
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{:.6e},{}",
                r.fc_ghz, r.mode, r.spacing_wl, r.d_m, r.rate_bps, r.rank_effective
            )
        })
        .collect();
    Ok(vec![(
        "thz_rates.csv".into(),
        csv(
            run_id,
            "fc_ghz,mode,spacing_wl,d_m,rate_bps,rank_effective",
            &rows,
        ),
    )])
}
