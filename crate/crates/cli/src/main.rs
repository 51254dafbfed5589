use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fb4_core::analytics::{self, BitScheme, Metrics};
use fb4_core::baselines::{self, Fp4Scheme};
use fb4_core::decomp::{self, TokenPlan};
use fb4_core::pipeline;
use fb4_core::quant::{self, pack_container, unpack_container};
use fb4_core::seda::{self, Sidecar};
use fb4_core::{BlockLayout, Formatbook, LutSet, Tensor};

mod config;

#[derive(Parser)]
#[command(
    name = "fb4",
    version,
    about = "Block-wise mixed-format 4-bit quantization"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the canonical formatbook and its hash.
    Formatbook,
    /// Quantize an FBT1 tensor into an FBQ1 container.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 32)]
        block: usize,
        #[arg(long, default_value_t = 8)]
        groups: usize,
        #[arg(long, default_value = "grouped")]
        mode: String,
        /// Constrain anchor and correlated tokens to the sidecar's sub-book.
        #[arg(long)]
        seda_sidecar: Option<PathBuf>,
        /// Rows to decompose: `all` or a list such as `0,4,8-11`.
        #[arg(long)]
        decompose: Option<String>,
    },
    /// Decode an FBQ1 container back to FBT1.
    Dequantize { input: PathBuf, output: PathBuf },
    /// Error metrics of `b` against reference `a`, as CSV.
    Compare { a: PathBuf, b: PathBuf },
    /// Compare FB4 against an FP4 baseline on one tensor.
    Baseline {
        input: PathBuf,
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value_t = 32)]
        block: usize,
        #[arg(long, default_value_t = 8)]
        groups: usize,
    },
    /// Run the toy denoising loop from a TOML config.
    Simulate {
        config: PathBuf,
        /// Per-step CSV report (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the final anchor set and sub-book here.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Tensor::from_fbt1(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn parse_rows(spec: &str, rows: usize) -> Result<Vec<usize>> {
    if spec.trim() == "all" {
        return Ok((0..rows).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>()?, b.trim().parse::<usize>()?),
            None => {
                let v = part
                    .parse::<usize>()
                    .with_context(|| format!("bad row {part:?}"))?;
                (v, v)
            }
        };
        if a > b || b >= rows {
            bail!("row range {part:?} outside 0..{rows}");
        }
        out.extend(a..=b);
    }
    Ok(out)
}

fn quantize(
    input: &Path,
    output: &Path,
    layout: BlockLayout,
    mode: &str,
    sidecar: Option<&Path>,
    decompose: Option<&str>,
) -> Result<()> {
    let t = read_tensor(input)?;
    let mode = config::parse_mode(mode)?;
    let fb = Formatbook::canonical();
    let luts = LutSet::build(&fb);
    let salient = match decompose {
        Some(spec) => parse_rows(spec, t.rows())?,
        None => Vec::new(),
    };
    let container = match sidecar {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let sc =
                Sidecar::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
            seda::seda_quantize(
                &t,
                &sc.anchors,
                &sc.book,
                &layout,
                &fb,
                &luts,
                mode,
                Some(&salient),
            )?
        }
        None => decomp::quantize_tokens(
            &t,
            &layout,
            &fb,
            &luts,
            &TokenPlan {
                mode,
                salient: &salient,
                constrained: None,
            },
        )?,
    };
    write(output, pack_container(&container))
}

fn dequantize(input: &Path, output: &Path) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let fb = Formatbook::canonical();
    let c =
        unpack_container(&bytes, &fb).with_context(|| format!("parsing {}", input.display()))?;
    write(output, quant::dequantize_container(&c, &fb)?.to_fbt1())
}

fn baseline(input: &Path, scheme: &str, layout: BlockLayout) -> Result<String> {
    let t = read_tensor(input)?;
    let scheme: Fp4Scheme = scheme.parse()?;
    let fb = Formatbook::canonical();
    let luts = LutSet::build(&fb);
    let qt = quant::quantize_tensor(&t, &layout, &fb, &luts, Default::default())?;
    let fb4 = analytics::compare(&t, &quant::dequantize_tensor(&qt, &fb)?)?;
    let base = analytics::compare(
        &t,
        &baselines::fake_quantize(&t, layout.block_size(), scheme)?,
    )?;
    let mut out = format!("scheme,block,effective_bits,{}\n", Metrics::CSV_HEADER);
    let fb4_bits = analytics::effective_bits(&layout, BitScheme::Fb4, 0.0)?;
    out += &format!("fb4,{},{fb4_bits},{}\n", layout.block_size(), fb4.csv_row());
    let (name, bits) = match scheme {
        Fp4Scheme::Mxfp4 => (
            "mxfp4",
            analytics::effective_bits(&layout, BitScheme::Mxfp4 { scale_bits: 8 }, 0.0)?,
        ),
        Fp4Scheme::Nvfp4 => (
            "nvfp4-style",
            analytics::effective_bits(&layout, BitScheme::Nvfp4, 0.0)?,
        ),
    };
    out += &format!("{name},{},{bits},{}\n", layout.block_size(), base.csv_row());
    if scheme == Fp4Scheme::Mxfp4 {
        let five = analytics::effective_bits(&layout, BitScheme::Mxfp4 { scale_bits: 5 }, 0.0)?;
        out += &format!(
            "mxfp4-5bit-scale,{},{five},{}\n",
            layout.block_size(),
            base.csv_row()
        );
    }
    Ok(out)
}

fn simulate(config: &Path, out: Option<&Path>, sidecar: Option<&Path>) -> Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = config::FileConfig::parse(&text)?.into_run_config()?;
    let report = pipeline::run_denoise_loop(&cfg)?;
    match out {
        Some(p) => {
            write(p, report.to_csv())?;
            print!("{}", report.summary());
        }
        None => print!("{}", report.to_csv()),
    }
    if let Some(p) = sidecar {
        let sc = report
            .sidecar
            .as_ref()
            .context("run produced no anchors (SeDA disabled or never updated)")?;
        write(p, sc.to_text())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Formatbook => {
            let fb = Formatbook::canonical();
            print!("{}", fb.to_text());
            println!("hash {:016x}", fb.hash());
        }
        Cmd::Quantize {
            input,
            output,
            block,
            groups,
            mode,
            seda_sidecar,
            decompose,
        } => quantize(
            &input,
            &output,
            BlockLayout::new(block, groups)?,
            &mode,
            seda_sidecar.as_deref(),
            decompose.as_deref(),
        )?,
        Cmd::Dequantize { input, output } => dequantize(&input, &output)?,
        Cmd::Compare { a, b } => {
            let m = analytics::compare(&read_tensor(&a)?, &read_tensor(&b)?)?;
            println!("{}\n{}", Metrics::CSV_HEADER, m.csv_row());
        }
        Cmd::Baseline {
            input,
            scheme,
            block,
            groups,
        } => print!(
            "{}",
            baseline(&input, &scheme, BlockLayout::new(block, groups)?)?
        ),
        Cmd::Simulate {
            config,
            out,
            sidecar,
        } => simulate(&config, out.as_deref(), sidecar.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_rows;

    #[test]
    fn row_specs() {
        assert_eq!(parse_rows("0,4,8-10", 12).unwrap(), vec![0, 4, 8, 9, 10]);
        assert_eq!(parse_rows("all", 3).unwrap(), vec![0, 1, 2]);
        assert!(parse_rows("5", 5).is_err());
        assert!(parse_rows("3-1", 5).is_err());
        assert!(parse_rows("x", 5).is_err());
    }
}
