// Pre-check of the acceptance-scale training pipeline.
use oldn_core::codec_sim::{degrade_plane, rgb_to_yuv420, synthetic_rgb, QpConfig};
use oldn_core::harness::{psnr, simulate_roundtrip};
use oldn_core::network::ModelConfig;
use oldn_core::training::{patch_origins, train_offline, OfflineConfig, OnlineConfig, TrainSample};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    // 2000 synthetic patch pairs at QP 27 from 25 images (80 patches each)
    let qp27 = QpConfig::new(27).unwrap();
    let mut dataset = Vec::new();
    for img_idx in 0..25u64 {
        let rgb = synthetic_rgb(128, 128, 1000 + img_idx);
        let raw = rgb_to_yuv420(&rgb).unwrap();
        let deg_y = degrade_plane(&raw.y, qp27);
        for (chroma_raw, chroma_deg) in [
            (&raw.u, degrade_plane(&raw.u, qp27)),
            (&raw.v, degrade_plane(&raw.v, qp27)),
        ] {
            let origins = patch_origins(64, 64, 40, 77 + img_idx, 32).unwrap();
            for (x, y) in origins {
                dataset.push(TrainSample {
                    deg_luma: deg_y.crop_at(2 * x, 2 * y, 64, 64).to_tensor_norm::<f32>(),
                    deg_chroma: chroma_deg.crop_at(x, y, 32, 32).to_tensor_norm(),
                    raw_chroma: chroma_raw.crop_at(x, y, 32, 32).to_tensor_norm(),
                });
            }
        }
    }
    println!("dataset: {} samples in {:.1}s", dataset.len(), t0.elapsed().as_secs_f64());

    let model_cfg = ModelConfig::small(16);
    let offline = OfflineConfig { batch_size: 64, lr: 1e-4, epochs: 15, seed: 11, chroma_patch: 32 };
    let t1 = Instant::now();
    let (model, losses) = train_offline::<f32>(&dataset, &model_cfg, &offline).unwrap();
    println!("offline: {:.1}s, losses {:?}", t1.elapsed().as_secs_f64(), losses);

    // validation on held-out frames + online gain at QP 32
    let t2 = Instant::now();
    let mut base_gain = 0.0;
    let mut online_gain = 0.0;
    let mut side_max = 0u64;
    let n_frames = 4usize; // subset for the pre-check; acceptance uses 10
    for i in 0..n_frames as u64 {
        let rgb = synthetic_rgb(128, 128, 9000 + i);
        let out = simulate_roundtrip(&rgb, 32, &model, &OnlineConfig { steps: 100, lr: 1e-2, tile: None }, 8).unwrap();
        // degraded-vs-raw baseline comparison
        let raw = rgb_to_yuv420(&rgb).unwrap();
        let qp32 = QpConfig::new(32).unwrap();
        let d_u = psnr(&raw.u, &degrade_plane(&raw.u, qp32)).unwrap();
        let d_v = psnr(&raw.v, &degrade_plane(&raw.v, qp32)).unwrap();
        println!(
            "frame {i}: degraded {:.3} baseline {:.3} online {:.3} side {} parity {}",
            (d_u + d_v) / 2.0, out.baseline.mean(), out.enhanced.mean(), out.side_bits, out.parity_ok
        );
        base_gain += out.baseline.mean() - (d_u + d_v) / 2.0;
        online_gain += out.enhanced.mean() - out.baseline.mean();
        side_max = side_max.max(out.side_bits);
    }
    println!(
        "mean baseline gain {:.4} dB, mean online gain {:.4} dB, max side {} bits, eval {:.1}s, total {:.1}s",
        base_gain / n_frames as f64, online_gain / n_frames as f64, side_max,
        t2.elapsed().as_secs_f64(), t0.elapsed().as_secs_f64()
    );
}
