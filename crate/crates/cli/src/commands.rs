use std::fmt::Write as _;
use std::path::Path;

use ozone_core::attack::{leakage_of, profile_pair, recover_key_byte, AttackError, AttackSetup, Profile};
use ozone_core::ifconv::convert_program;
use ozone_core::ir::{parse_program, print_program, Program, Region};
use ozone_core::kernels::{
    catalog, check_inputs, footprint, random_inputs, sweep_inputs, KernelEntry, Variant, KERNEL_NAMES,
};
use ozone_core::microsim::{
    input_hash, measure_cycles_compiled, simulate_ozone_compiled, Compiled, Core, MicroarchConfig, Mode,
    OzoneContext, SimResult, CSV_HEADER,
};
use ozone_core::verifier::{verify as verify_program, SpmLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifact::{header, hex_row, input_err, load_config, parse_hex_csv, write_atomic, Failure};
use crate::{AttackArgs, LayoutArgs, ReportArgs, SimulateArgs};

fn read_program(path: &Path) -> Result<Program, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_program(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn transform(input: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let p = read_program(input)?;
    let q = convert_program(&p).map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
    let text = print_program(&q);
    match output {
        Some(o) => write_atomic(o, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn layout_from(args: &LayoutArgs) -> Result<SpmLayout, Failure> {
    let base = match &args.config {
        Some(p) => load_config(Some(p))?.spm,
        None => SpmLayout::default(),
    };
    let pick = |r: Region, b: Option<u64>, s: Option<u64>| Region::new(b.unwrap_or(r.base), s.unwrap_or(r.size));
    let ispm = pick(base.ispm, args.ispm_base, args.ispm_size);
    let dspm = pick(base.dspm, args.dspm_base, args.dspm_size);
    // a resized dspm keeps the stack at its top unless told otherwise
    let stack_size = args.stack_size.unwrap_or(base.stack.size);
    let stack_base = args.stack_base.unwrap_or(if args.dspm_base.is_some() || args.dspm_size.is_some() {
        dspm.end().saturating_sub(stack_size)
    } else {
        base.stack.base
    });
    SpmLayout::new(ispm, dspm, Region::new(stack_base, stack_size)).map_err(input_err)
}

pub fn verify(input: &Path, layout: &LayoutArgs, csv: Option<&Path>) -> Result<(), Failure> {
    let p = read_program(input)?;
    let layout = layout_from(layout)?;
    let report = verify_program(&p, &layout);
    print!("{}", report.summary());
    if let Some(c) = csv {
        write_atomic(c, &report.to_csv())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!("{} failed verification", input.display())))
    }
}

fn secret_key(seed: u64, stream: u64) -> [u8; 16] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

fn simulation_inputs(a: &SimulateArgs, entry: &KernelEntry) -> Result<(Vec<Vec<u64>>, String), Failure> {
    let seed = a.common.seed;
    if let Some(path) = &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let rows = parse_hex_csv(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        for r in &rows {
            check_inputs(entry.name, r).map_err(input_err)?;
        }
        if rows.is_empty() {
            return Err(Failure::Input(format!("{}: no input vectors", path.display())));
        }
        return Ok((rows, format!("file {}", path.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(i) = a.sweep_byte {
        let key = secret_key(seed, 1);
        let rows = (0..=255u8)
            .map(|v| sweep_inputs(entry.name, &key, i, v, &mut rng))
            .collect::<Result<Vec<_>, _>>()
            .map_err(input_err)?;
        return Ok((rows, format!("sweep byte {i}")));
    }
    if a.count == 0 {
        return Err(Failure::Input("--count must be at least 1".into()));
    }
    let rows = (0..a.count)
        .map(|_| random_inputs(entry.name, &mut rng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(input_err)?;
    Ok((rows, format!("{} random", a.count)))
}

fn ozone_context(prog: &Compiled, first: &[u64], cfg: &MicroarchConfig, declared: &str) -> Result<OzoneContext, Failure> {
    let cycles = if declared == "auto" {
        measure_cycles_compiled(prog, first, cfg).map_err(input_err)?
    } else {
        declared
            .parse::<u64>()
            .ok()
            .filter(|c| *c > 0)
            .ok_or_else(|| Failure::Input(format!("--declared-cycles: `{declared}` is not a positive count or `auto`")))?
    };
    Ok(OzoneContext::new(cycles, cfg.spm))
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = load_config(a.common.config.as_deref())?;
    let entry = catalog().get(&a.kernel).map_err(input_err)?;
    let mode: Mode = a.mode.into();
    let (inputs, source) = simulation_inputs(a, entry)?;

    let results: Vec<SimResult> = match mode {
        Mode::Baseline => {
            let prog = Compiled::new(&entry.baseline).map_err(input_err)?;
            inputs
                .iter()
                .map(|i| {
                    let mut core = Core::new(cfg);
                    if a.warm {
                        core.run_baseline(&prog, i, true)?;
                    }
                    core.run_baseline(&prog, i, !a.warm)
                })
                .collect::<Result<_, _>>()
                .map_err(input_err)?
        }
        Mode::Ozone => {
            let prog = Compiled::new(&entry.ozone).map_err(input_err)?;
            let ctx = ozone_context(&prog, &inputs[0], &cfg, &a.declared_cycles)?;
            inputs
                .iter()
                .map(|i| simulate_ozone_compiled(&prog, i, &cfg, &ctx))
                .collect::<Result<_, _>>()
                .map_err(input_err)?
        }
    };

    let mut csv = header(
        "simulate",
        a.common.seed,
        &cfg,
        &[
            ("kernel", entry.name.to_string()),
            ("mode", mode.name().to_string()),
            ("inputs", source),
            ("warm", a.warm.to_string()),
        ],
    );
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for (i, r) in inputs.iter().zip(&results) {
        csv.push_str(&r.csv_row(entry.name, mode, &input_hash(i)));
        csv.push('\n');
    }
    let path = a.common.out.join(format!("simulate-{}-{}.csv", entry.name, mode.name()));
    write_atomic(&path, &csv)?;

    let cycles: Vec<u64> = results.iter().map(|r| r.cycles).collect();
    let leak = leakage_of::<f64>(&cycles);
    let wdt = results.iter().filter(|r| r.terminated_by_wdt).count();
    println!("kernel {} mode {} runs {}", entry.name, mode.name(), results.len());
    println!(
        "cycles min {} max {} spread {} variance {:.3}",
        cycles.iter().min().unwrap(),
        cycles.iter().max().unwrap(),
        leak.spread,
        leak.variance
    );
    println!("leakage: {}", if leak.zero_leakage { "none" } else { "present" });
    println!("wrote {}", path.display());
    if wdt > 0 {
        return Err(Failure::Watchdog(format!(
            "watchdog terminated {wdt} of {} runs; outputs withheld",
            results.len()
        )));
    }
    Ok(())
}

fn profile_csv(p: &Profile, head: &str) -> String {
    let mut out = String::from(head);
    out.push_str("value,mean_cycles,trials\n");
    for (v, m) in p.means.iter().enumerate() {
        let _ = writeln!(out, "{v},{m},{}", p.trials);
    }
    out
}

pub fn attack(a: &AttackArgs) -> Result<(), Failure> {
    let cfg = load_config(a.common.config.as_deref())?;
    let entry = catalog().get(&a.kernel).map_err(input_err)?;
    let mode: Mode = a.mode.into();
    let positions: Vec<usize> = match a.sweep_byte {
        Some(i) if i < entry.sweep_bytes.min(16) => vec![i],
        Some(i) => return Err(Failure::Input(format!("--sweep-byte {i} out of range for {}", entry.name))),
        None => (0..entry.sweep_bytes.min(16)).collect(),
    };
    if a.trials == 0 {
        return Err(Failure::Input("--trials must be at least 1".into()));
    }
    let seed = a.common.seed;
    let kref = secret_key(seed, 2);
    let ktarget = secret_key(seed, 3);
    let setup = AttackSetup {
        kernel: entry.name,
        mode,
        cfg: &cfg,
        trials: a.trials,
        seed,
    };
    let extra = |what: &str| {
        vec![
            ("kernel", entry.name.to_string()),
            ("mode", mode.name().to_string()),
            ("trials", a.trials.to_string()),
            ("profile", what.to_string()),
        ]
    };

    let mut report = header("attack", seed, &cfg, &extra("recovery"));
    report.push_str("position,true_byte,rank,guessed_byte\n");
    let (mut hits, mut silent) = (0, 0);
    for &i in &positions {
        let (r, t) = profile_pair(&setup, &kref, &ktarget, i).map_err(input_err)?;
        let dir = &a.common.out;
        let stem = format!("profile-{}-{}-byte{i:02}", entry.name, mode.name());
        write_atomic(&dir.join(format!("{stem}-ref.csv")), &profile_csv(&r, &header("attack", seed, &cfg, &extra("reference"))))?;
        write_atomic(&dir.join(format!("{stem}-target.csv")), &profile_csv(&t, &header("attack", seed, &cfg, &extra("target"))))?;
        match recover_key_byte(&r, kref[i], &t) {
            Ok(rk) => {
                let rank = rk.rank_of(ktarget[i]);
                hits += (rank == 0) as usize;
                let _ = writeln!(report, "{i},{:02x},{rank},{:02x}", ktarget[i], rk.best());
                println!("byte {i:2}: true {:02x} guess {:02x} rank {rank}", ktarget[i], rk.best());
            }
            Err(AttackError::NoSignal) => {
                silent += 1;
                let _ = writeln!(report, "{i},{:02x},-,-", ktarget[i]);
                println!("byte {i:2}: no signal");
            }
            Err(e) => return Err(input_err(e)),
        }
    }
    let path = a.common.out.join(format!("recovery-{}-{}.csv", entry.name, mode.name()));
    write_atomic(&path, &report)?;
    let n = positions.len();
    println!("rank 0: {hits}/{n}  no signal: {silent}/{n}");
    println!("wrote {}", path.display());

    if a.expect_no_signal {
        if silent == n {
            Ok(())
        } else {
            Err(Failure::Verdict(format!("timing signal found at {} of {n} positions", n - silent)))
        }
    } else if hits == n {
        Ok(())
    } else if silent == n {
        Err(Failure::Verdict("no timing signal at any position".into()))
    } else {
        Err(Failure::Verdict(format!("key recovered at {hits} of {n} positions")))
    }
}

struct Row {
    name: &'static str,
    cold: f64,
    warm: f64,
    ozone: u64,
    base_spread: u64,
    ozone_spread: u64,
    code: u64,
    data: u64,
    stack: u64,
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len() as f64
}

fn report_row(entry: &KernelEntry, cfg: &MicroarchConfig, seed: u64, samples: usize) -> Result<Row, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<u64>> = (0..samples)
        .map(|_| random_inputs(entry.name, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(input_err)?;
    let base = Compiled::new(&entry.baseline).map_err(input_err)?;
    let oz = Compiled::new(&entry.ozone).map_err(input_err)?;
    let (mut cold, mut warm, mut ozone) = (Vec::new(), Vec::new(), Vec::new());
    let ctx = ozone_context(&oz, &inputs[0], cfg, "auto")?;
    for i in &inputs {
        let mut core = Core::new(*cfg);
        cold.push(core.run_baseline(&base, i, true).map_err(input_err)?.cycles);
        warm.push(core.run_baseline(&base, i, false).map_err(input_err)?.cycles);
        let r = simulate_ozone_compiled(&oz, i, cfg, &ctx).map_err(input_err)?;
        if r.terminated_by_wdt {
            return Err(Failure::Watchdog(format!("{}: watchdog fired at {} cycles", entry.name, r.cycles)));
        }
        ozone.push(r.cycles);
    }
    let fp = footprint(&entry.ozone).map_err(input_err)?;
    let spread = |v: &[u64]| v.iter().max().unwrap() - v.iter().min().unwrap();
    Ok(Row {
        name: entry.name,
        cold: mean(&cold),
        warm: mean(&warm),
        ozone: ozone[0],
        base_spread: spread(&cold),
        ozone_spread: spread(&ozone),
        code: fp.code_bytes,
        data: fp.data_bytes,
        stack: fp.max_stack,
    })
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    let cfg = load_config(a.common.config.as_deref())?;
    if a.samples < 2 {
        return Err(Failure::Input("--samples must be at least 2".into()));
    }
    let rows = catalog()
        .entries()
        .iter()
        .enumerate()
        .map(|(k, e)| report_row(e, &cfg, a.common.seed.wrapping_add(k as u64), a.samples))
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = header("report", a.common.seed, &cfg, &[("samples", a.samples.to_string())]);
    csv.push_str(
        "kernel,baseline_cold_mean,baseline_warm_mean,ozone_cycles,baseline_spread,ozone_spread,\
         ozone_vs_warm,ozone_vs_cold,code_bytes,data_bytes,stack_bytes\n",
    );
    println!(
        "{:<11} {:>10} {:>10} {:>8} {:>8} {:>7} {:>8} {:>8} {:>7} {:>7} {:>6}",
        "kernel", "cold", "warm", "ozone", "b.spread", "o.spread", "oz/warm", "oz/cold", "code", "data", "stack"
    );
    for r in &rows {
        let (vw, vc) = (r.ozone as f64 / r.warm, r.ozone as f64 / r.cold);
        let _ = writeln!(
            csv,
            "{},{:.2},{:.2},{},{},{},{vw:.4},{vc:.4},{},{},{}",
            r.name, r.cold, r.warm, r.ozone, r.base_spread, r.ozone_spread, r.code, r.data, r.stack
        );
        println!(
            "{:<11} {:>10.1} {:>10.1} {:>8} {:>8} {:>8} {:>8.3} {:>8.3} {:>7} {:>7} {:>6}",
            r.name, r.cold, r.warm, r.ozone, r.base_spread, r.ozone_spread, vw, vc, r.code, r.data, r.stack
        );
    }
    let path = a.common.out.join("report.csv");
    write_atomic(&path, &csv)?;
    println!("wrote {}", path.display());
    let leaky: Vec<&str> = rows.iter().filter(|r| r.ozone_spread != 0).map(|r| r.name).collect();
    if leaky.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!("ozone cycles vary for {}", leaky.join(", "))))
    }
}

/// Seed for the shipped sample inputs of each kernel.
const SAMPLE_SEED: u64 = 0x0207_0e00;
const SAMPLES: usize = 16;

pub fn kernels(dir: &Path) -> Result<(), Failure> {
    for (k, name) in KERNEL_NAMES.iter().enumerate() {
        for v in [Variant::Baseline, Variant::Ozone] {
            let p = ozone_core::kernels::build_kernel(name, v).map_err(input_err)?;
            write_atomic(&dir.join(format!("{name}.{}.ir", v.name())), &print_program(&p))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED + k as u64);
        let mut csv = format!("# {name} sample inputs, one vector of hex words per line\n");
        for _ in 0..SAMPLES {
            let i = random_inputs(name, &mut rng).map_err(input_err)?;
            csv.push_str(&hex_row(&i));
            csv.push('\n');
        }
        write_atomic(&dir.join(format!("{name}.inputs.csv")), &csv)?;
    }
    println!("wrote {} kernels to {}", KERNEL_NAMES.len(), dir.display());
    Ok(())
}
