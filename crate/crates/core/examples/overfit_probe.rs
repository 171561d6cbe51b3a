use boxboost_core::loss::FeatureMap;
use boxboost_core::mask::{rasterize_boxes, BoundingBox, ImageSize, TriLabelMask};
use boxboost_core::net::{AdamWConfig, NetworkConfig, NetworkState};
use boxboost_core::pipeline::{train_single, TrainConfig, TrainItem};

fn main() {
    let size = ImageSize::new(32, 32);
    let b = rasterize_boxes(&[BoundingBox::new(8, 8, 22, 20)], size).unwrap();
    let values = b.bits().iter().map(|&v| if v { 0.85 } else { 0.15 }).collect();
    let item = TrainItem { image: FeatureMap::new(1, size, values), labels: TriLabelMask::from_binary(&b) };
    for (lr, warm, beta2) in [(0.02, 10, 0.999), (0.03, 10, 0.999), (0.02, 10, 0.99), (0.03, 10, 0.99), (0.05, 15, 0.99)] {
        let mut net = NetworkState::new(NetworkConfig::arch_a(1)).unwrap();
        let cfg = TrainConfig { epochs: 50, batch: 1, optimizer: AdamWConfig { lr, weight_decay: 0.0, beta2, ..Default::default() }, augment: false, seed: 3, warmup_steps: warm, cosine_decay: true };
        let logs = train_single(&mut net, &[item.clone()], &cfg).unwrap();
        let drops = logs.windows(2).filter(|w| w[1].terms.total() < w[0].terms.total()).count();
        println!("lr={lr} warm={warm} b2={beta2}: final={:.4} drops={drops}", logs.last().unwrap().terms.total());
        let t: Vec<String> = logs.iter().map(|l| format!("{:.3}", l.terms.total())).collect();
        println!("  {}", t.join(" "));
    }
}
