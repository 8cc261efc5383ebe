use std::fs;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tinyvis_core::codec::TrainConfig;
use tinyvis_core::dataset::synthetic::write_project;
use tinyvis_core::dataset::ProjectFolder;
use tinyvis_core::protocol::transport::Connection;
use tinyvis_core::protocol::DeviceEvent;
use tinyvis_core::sim::{run, Camera, SimOptions, VirtualDevice};

use tinyvis_cli::endpoint::{playback_camera, Endpoint};
use tinyvis_cli::project::{self, EvalSet, TrainOverrides, REPORT_EVERY};
use tinyvis_cli::render::{frame_ansi, frame_image, size_hint, DISPLAY_SCALE};
use tinyvis_cli::sdops::{capture_from_device, capture_from_dir, run_sd, CaptureSize, SdVerb};
use tinyvis_cli::service::{serve, AppState};

#[derive(Parser)]
#[command(name = "tinyvis", version, about = "Train, export and talk to a tiny on-device vision classifier")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// SD card operations on the device
    Sd {
        /// serial:<port>, tcp:<host>:<port> or sim:<dir>
        #[arg(long, short)]
        endpoint: Endpoint,
        #[command(subcommand)]
        verb: SdCmd,
    },
    /// Add labelled images to a project
    Capture {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// `device` or a directory of existing images
        #[arg(long, default_value = "device")]
        source: String,
        #[arg(long, short)]
        endpoint: Option<Endpoint>,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 12)]
        quality: u8,
    },
    /// Train on a project's images; weights go to .tinyvis/weights.bin
    Train {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long, value_parser = ["all", "random"])]
        mode: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write myWeights.bin and myWeights.h into <project>/header/
    Export {
        #[arg(long, default_value = ".")]
        project: PathBuf,
    },
    /// Print the confusion matrix of the trained weights
    Confusion {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long, value_enum, default_value_t = SetArg::Validation)]
        set: SetArg,
        /// Must match the seed used for `train` to reproduce its split
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stream Conv2 heatmaps from the device
    Heatmap {
        #[arg(long, short)]
        endpoint: Endpoint,
        /// Keep streaming until --frames frames or Ctrl-C
        #[arg(long)]
        watch: bool,
        /// Write each frame as a PNG here instead of drawing to the terminal
        #[arg(long)]
        png_dir: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the device simulator over an SD directory
    Sim {
        #[arg(long)]
        root: PathBuf,
        /// tcp:<host>:<port>, pty or stdio
        #[arg(long, default_value = "tcp:127.0.0.1:7000")]
        listen: String,
        /// Playback frames; defaults to the images in the root's class folders
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Inference interval in milliseconds, 0 to disable
        #[arg(long, default_value_t = 160)]
        tick_ms: u64,
    },
    /// Serve the local HTTP API for the web UI
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long, short)]
        endpoint: Option<Endpoint>,
    },
    /// How to flash the firmware
    Flash,
    /// Create a project folder with config.json and empty class folders
    Init {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        /// Comma-separated class labels
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        grayscale: bool,
    },
    /// Fill a project with generated images for hardware-free runs
    Synth {
        #[arg(long, default_value = ".")]
        project: PathBuf,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Conv2 output size and flattened length for an input size
    Hint {
        #[arg(long, default_value_t = 64)]
        input_size: usize,
        #[arg(long)]
        grayscale: bool,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
}

#[derive(Subcommand)]
enum SdCmd {
    Ls { #[arg(default_value = "/")] path: String },
    Cat { path: String },
    Get { path: String, #[arg(long, short)] out: Option<PathBuf> },
    Put { local: PathBuf, path: String },
    Rm { path: String },
    Rmdir { path: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Validation,
    Train,
    All,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {e:#}");
        let retry = e.downcast_ref::<tinyvis_core::protocol::ClientError>().is_some_and(|c| c.is_retryable());
        if retry {
            eprintln!("the transfer was interrupted; retrying the command is safe");
        }
        std::process::exit(if retry { 75 } else { 1 });
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let stdout = &mut io::stdout().lock();
    match cmd {
        Cmd::Sd { endpoint, verb } => {
            let verb = match verb {
                SdCmd::Ls { path } => SdVerb::Ls(path),
                SdCmd::Cat { path } => SdVerb::Cat(path),
                SdCmd::Get { path, out } => SdVerb::Get { path, out },
                SdCmd::Put { local, path } => SdVerb::Put { local, path },
                SdCmd::Rm { path } => SdVerb::Rm(path),
                SdCmd::Rmdir { path } => SdVerb::Rmdir(path),
            };
            run_sd(&mut endpoint.client()?, &verb, stdout)
        }
        Cmd::Capture { project, label, count, source, endpoint, width, height, quality } => {
            let config = ProjectFolder::open(&project).load_config().context("loading config.json")?;
            let saved = if source == "device" {
                let ep = endpoint.context("--source device needs --endpoint")?;
                let size = CaptureSize { width, height, quality };
                capture_from_device(&mut ep.client()?, size, count, &label, &project, &config.class_labels)?
            } else {
                capture_from_dir(Path::new(&source), count, &label, &project, &config.class_labels)?
            };
            for p in &saved {
                writeln!(stdout, "{}", p.display())?;
            }
            let counts = ProjectFolder::open(&project).class_counts(&config);
            let summary: Vec<String> = config.class_labels.iter().zip(counts).map(|(l, n)| format!("{l}={n}")).collect();
            writeln!(stdout, "{}", summary.join(" "))?;
            Ok(())
        }
        Cmd::Train { project, epochs, batch, lr, mode, seed } => {
            let folder = ProjectFolder::open(&project);
            let overrides = TrainOverrides { epochs, batch_size: batch, learning_rate: lr, mode, seed: Some(seed) };
            train(&folder, &overrides, stdout)
        }
        Cmd::Export { project } => {
            let out = project::export(&ProjectFolder::open(&project))?;
            writeln!(stdout, "{} ({} bytes)", out.bin.display(), out.bin_bytes)?;
            writeln!(stdout, "{}", out.header.display())?;
            Ok(())
        }
        Cmd::Confusion { project, set, seed } => {
            let set = match set {
                SetArg::Validation => EvalSet::Validation,
                SetArg::Train => EvalSet::Train,
                SetArg::All => EvalSet::All,
            };
            let (cm, labels) = project::evaluate(&ProjectFolder::open(&project), set, seed)?;
            write!(stdout, "{}", cm.render(&labels))?;
            writeln!(stdout, "accuracy {:.1}% ({}/{})", cm.accuracy() * 100.0, cm.correct(), cm.total())?;
            Ok(())
        }
        Cmd::Heatmap { endpoint, watch, png_dir, frames } => {
            let limit = if watch { frames } else { Some(frames.unwrap_or(1)) };
            heatmap(&endpoint, png_dir.as_deref(), limit, stdout)
        }
        Cmd::Sim { root, listen, camera, tick_ms } => sim(&root, &listen, camera.as_deref(), tick_ms),
        Cmd::Serve { port, project, endpoint } => {
            let conn = endpoint.as_ref().map(|e| e.open().map(|l| l.conn)).transpose()?;
            let state = AppState::new(ProjectFolder::open(project), conn);
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            tokio::runtime::Runtime::new()?.block_on(serve(addr, state))
        }
        Cmd::Flash => {
            writeln!(stdout, "{FLASH_HELP}")?;
            Ok(())
        }
        Cmd::Init { project, labels, input_size, grayscale } => {
            let mut config = TrainConfig::default();
            if let Some(labels) = labels {
                config.num_classes = labels.len();
                config.class_labels = labels;
            }
            if let Some(s) = input_size {
                config.input_size = s;
            }
            config.use_grayscale = grayscale;
            let folder = ProjectFolder::init(&project, &config)?;
            writeln!(stdout, "{}", folder.config_path().display())?;
            Ok(())
        }
        Cmd::Synth { project, per_class, seed } => {
            let folder = ProjectFolder::open(&project);
            let config = if folder.config_path().is_file() { folder.load_config()? } else { TrainConfig::default() };
            write_project(&project, &config, per_class, seed)?;
            writeln!(stdout, "{} images in {} classes", per_class * config.num_classes, config.num_classes)?;
            Ok(())
        }
        Cmd::Hint { input_size, grayscale, classes } => {
            let h = size_hint(input_size, grayscale, classes)?;
            writeln!(
                stdout,
                "input {0}x{0}: conv1 {1}x{1}, pool {2}x{2}, conv2 {3}x{3}x8, flatten {4}, {5} parameters",
                h.input_size, h.conv1_side, h.pool_side, h.conv2_side, h.flatten, h.params
            )?;
            Ok(())
        }
    }
}

const FLASH_HELP: &str = "\
Firmware flashing is done with the vendor tool, not by tinyvis.

  esptool.py --chip esp32s3 --port /dev/ttyACM0 --baud 921600 \\
      write_flash 0x0 firmware.merged.bin

Or use the Arduino IDE upload button with the firmware sketch. After
flashing, copy the project's header/ folder (config.json, myWeights.bin)
and class folders to the microSD card, or push them with
`tinyvis sd put`, then reset the board.";

fn train(folder: &ProjectFolder, overrides: &TrainOverrides, out: &mut dyn Write) -> Result<()> {
    let mut setup = project::prepare_training(folder, overrides)?;
    writeln!(
        out,
        "training on {} images ({} held out, {} unreadable) for {} epochs",
        setup.train.len(),
        setup.validation.len(),
        setup.skipped,
        setup.epochs
    )?;
    let started = Instant::now();
    let mut last = None;
    setup.state.train_epochs(&setup.train, setup.epochs, |r| {
        if r.batch % REPORT_EVERY == 0 {
            let _ = writeln!(out, "{}", project::progress_line(r));
        }
        last = Some(r.status);
    })?;
    let weights = &setup.state.weights;
    let path = project::save_checkpoint(folder, weights, &setup.config.class_labels)?;
    writeln!(out, "done in {:.1}s after {} batches", started.elapsed().as_secs_f64(), setup.state.batch_counter)?;
    if let Some(status) = last {
        writeln!(out, "status {status}")?;
    }
    if let Some(acc) = project::accuracy(weights, &setup.train)? {
        writeln!(out, "train accuracy {:.1}%", acc * 100.0)?;
    }
    if let Some(acc) = project::accuracy(weights, &setup.validation)? {
        writeln!(out, "validation accuracy {:.1}%", acc * 100.0)?;
    }
    writeln!(out, "weights saved to {}", path.display())?;
    Ok(())
}

fn heatmap(endpoint: &Endpoint, png_dir: Option<&Path>, limit: Option<usize>, out: &mut dyn Write) -> Result<()> {
    if let Some(dir) = png_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut client = endpoint.client()?;
    client.heatmap_on()?;
    let mut seen = 0;
    let mut quiet_since = Instant::now();
    while limit.is_none_or(|n| seen < n) {
        match client.poll(Duration::from_millis(500))? {
            Some(DeviceEvent::HeatmapFrame(f)) => {
                seen += 1;
                quiet_since = Instant::now();
                if let Some(dir) = png_dir {
                    let path = dir.join(format!("heatmap_{seen:05}.png"));
                    frame_image(&f, DISPLAY_SCALE).save(&path)?;
                    writeln!(out, "{} ({}x{})", path.display(), f.rows, f.cols)?;
                } else {
                    write!(out, "\x1b[H{}", frame_ansi(&f))?;
                }
            }
            Some(DeviceEvent::FreeText(line)) if png_dir.is_some() => writeln!(out, "{line}")?,
            _ => {
                if quiet_since.elapsed() > Duration::from_secs(10) {
                    let _ = client.heatmap_off();
                    bail!("no heatmap frames for 10 s; does the device have weights and a camera?");
                }
            }
        }
    }
    client.heatmap_off()?;
    Ok(())
}

fn sim(root: &Path, listen: &str, camera: Option<&Path>, tick_ms: u64) -> Result<()> {
    fs::create_dir_all(root)?;
    let make_device = || -> Result<VirtualDevice> {
        let cam = match camera {
            Some(dir) => Camera::from_dir(dir).with_context(|| format!("camera dir {}", dir.display()))?,
            None => playback_camera(root),
        };
        Ok(VirtualDevice::new(root, cam)?)
    };
    let options = SimOptions {
        tick_interval: (tick_ms > 0).then(|| Duration::from_millis(tick_ms)),
        ..SimOptions::default()
    };
    if let Some(addr) = listen.strip_prefix("tcp:") {
        let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
        log::info!("simulator on tcp:{}", listener.local_addr()?);
        // one client at a time; each connection reboots the device
        for stream in listener.incoming() {
            let stream = stream?;
            log::info!("client {}", stream.peer_addr()?);
            if let Err(e) = run(make_device()?, Connection::from_tcp(stream)?, &options) {
                log::warn!("connection ended: {e}");
            }
        }
        Ok(())
    } else if listen == "pty" {
        sim_pty(make_device()?, &options)
    } else if listen == "stdio" {
        Ok(run(make_device()?, Connection::new(io::stdin(), io::stdout()), &options)?)
    } else {
        bail!("unknown --listen {listen:?}; use tcp:<host>:<port>, pty or stdio")
    }
}

#[cfg(unix)]
fn sim_pty(device: VirtualDevice, options: &SimOptions) -> Result<()> {
    use serialport::SerialPort;
    let (master, slave) = serialport::TTYPort::pair().context("opening a pseudo-terminal")?;
    let name = slave.name().unwrap_or_else(|| "?".into());
    println!("simulator attached to {name} (connect with --endpoint serial:{name})");
    let reader = master.try_clone_native()?;
    // keep the slave open so the pty survives until a client attaches
    let _slave = slave;
    Ok(run(device, Connection::new(reader, master), options)?)
}

#[cfg(not(unix))]
fn sim_pty(_: VirtualDevice, _: &SimOptions) -> Result<()> {
    bail!("pseudo-terminals are only available on unix")
}
