use std::fs;
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use image::{DynamicImage, Rgb, RgbImage};
use tinyvis_core::codec::{emit_config, encode_bin, TrainConfig, WeightBundle};
use tinyvis_core::model::{build_model, ModelSpec};
use tinyvis_core::protocol::transport::Connection;
use tinyvis_core::protocol::{parse_line, DeviceClient, DeviceEvent};
use tinyvis_core::sim::{parse_prediction, run, Camera, SimOptions, VirtualDevice};

fn frame(color: [u8; 3]) -> DynamicImage {
    DynamicImage::ImageRgb8(RgbImage::from_fn(64, 64, |x, y| {
        Rgb([color[0] ^ (x as u8), color[1], color[2].wrapping_add(y as u8)])
    }))
}

fn provisioned(root: &std::path::Path, weights_file: &str) -> TrainConfig {
    let config = TrainConfig { weights_file: weights_file.into(), ..Default::default() };
    let w = build_model(ModelSpec::new(64, false, 3), 5).unwrap();
    let bundle = WeightBundle::from_model(&w, config.class_labels.clone()).unwrap();
    fs::create_dir_all(root.join("header")).unwrap();
    fs::write(root.join("header/config.json"), emit_config(&config)).unwrap();
    fs::write(root.join("header").join(weights_file), encode_bin(&bundle)).unwrap();
    config
}

#[test]
fn boot_reads_weights_named_in_config() {
    let dir = tempfile::tempdir().unwrap();
    provisioned(dir.path(), "other.bin");
    let mut dev = VirtualDevice::new(dir.path(), Camera::none()).unwrap();
    let lines = dev.boot();
    assert!(lines.iter().any(|l| l.starts_with("Weights loaded: /header/other.bin (20595 params)")), "{lines:?}");
    assert_eq!(dev.model().unwrap().class_labels, dev.config().unwrap().class_labels);
}

#[test]
fn config_without_weights_boots() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("header")).unwrap();
    fs::write(dir.path().join("header/config.json"), emit_config(&TrainConfig::default())).unwrap();
    let mut dev = VirtualDevice::new(dir.path(), Camera::none()).unwrap();
    let lines = dev.boot();
    assert!(lines.contains(&"Weights: none\n".to_string()), "{lines:?}");
    assert!(dev.config().is_some());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("header")).unwrap();
    fs::write(dir.path().join("header/config.json"), "{\"version\": 1}").unwrap();
    let mut dev = VirtualDevice::new(dir.path(), Camera::none()).unwrap();
    assert!(dev.boot().iter().any(|l| l.starts_with("Config error")));
    assert!(dev.config().is_none());
}

#[test]
fn same_frame_gives_identical_stream_lines() {
    let dir = tempfile::tempdir().unwrap();
    provisioned(dir.path(), "myWeights.bin");
    let img = frame([200, 40, 10]);
    let mut dev = VirtualDevice::new(dir.path(), Camera::from_frames(vec![img.clone(), img])).unwrap();
    dev.boot();
    dev.handle_line("HEATMAP_ON");
    let a = dev.inference_tick();
    let b = dev.inference_tick();
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    match parse_line(&a[0]) {
        DeviceEvent::HeatmapFrame(f) => assert_eq!((f.rows, f.cols), (29, 29)),
        other => panic!("{other:?}"),
    }
    let (idx, label, conf) = parse_prediction(&a[1]).unwrap();
    assert_eq!(label, TrainConfig::default().class_labels[idx]);
    assert!((0.0..=1.0).contains(&conf));
}

#[test]
fn heatmap_off_suppresses_frames() {
    let dir = tempfile::tempdir().unwrap();
    provisioned(dir.path(), "myWeights.bin");
    let mut dev = VirtualDevice::new(dir.path(), Camera::from_frames(vec![frame([1, 2, 3])])).unwrap();
    dev.boot();
    dev.handle_line("HEATMAP_ON");
    dev.handle_line("HEATMAP_OFF");
    for _ in 0..3 {
        let out = dev.inference_tick();
        assert_eq!(out.len(), 1);
        assert!(out[0].starts_with("PRED:"));
    }
}

#[test]
fn serves_client_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    provisioned(dir.path(), "myWeights.bin");
    let dev = VirtualDevice::new(dir.path(), Camera::from_frames(vec![frame([9, 9, 9])])).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let opts = SimOptions { tick_interval: Some(Duration::from_millis(20)), ..Default::default() };
        run(dev, Connection::from_tcp(stream).unwrap(), &opts)
    });

    let mut client = DeviceClient::new(Connection::tcp(addr).unwrap());
    client.write_file("/notes/a.txt", b"line one\nline two\n").unwrap();
    assert_eq!(client.read_text("/notes/a.txt").unwrap(), "line one\nline two\n");
    let entries = client.list("/").unwrap();
    assert!(entries.iter().any(|e| e.name == "notes"));
    client.heatmap_on().unwrap();
    let mut got_frame = false;
    for _ in 0..100 {
        if let Some(DeviceEvent::HeatmapFrame(f)) = client.poll(Duration::from_millis(100)).unwrap() {
            assert_eq!(f.bytes.len(), 29 * 29);
            got_frame = true;
            break;
        }
    }
    assert!(got_frame);
    client.heatmap_off().unwrap();
    drop(client);
    server.join().unwrap().unwrap();
}
