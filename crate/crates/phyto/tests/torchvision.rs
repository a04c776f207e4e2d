//! Cross-check of every architecture against torchvision. Fixtures come from
//! `scripts/torch_fixtures.py`; the test is a no-op unless
//! `PHYTO_TORCH_FIXTURES` points at them.

use std::path::PathBuf;

use candle_core::Device;
use phyto::backbones::layers::Pass;
use phyto::backbones::params::Group;
use phyto::backbones::{build_classifier, BackboneName, BackboneSpec, BuildOptions};

const RELATIVE_TOLERANCE: f32 = 1e-3;

#[test]
fn logits_match_torchvision() {
    let Some(dir) = std::env::var_os("PHYTO_TORCH_FIXTURES").map(PathBuf::from) else {
        eprintln!("PHYTO_TORCH_FIXTURES not set; skipping");
        return;
    };
    for name in BackboneName::ALL {
        let io_path = dir.join(format!("{}.io.safetensors", name.as_str()));
        if !io_path.exists() {
            eprintln!("{}: no fixture", name.as_str());
            continue;
        }
        let opts = BuildOptions { weights_dir: Some(dir.clone()), ..Default::default() };
        let model = build_classifier(BackboneSpec { name, pretrained: true }, 1000, 0, &opts).unwrap();
        let all = candle_core::safetensors::load(dir.join(format!("{}.safetensors", name.as_str())), &Device::Cpu).unwrap();
        let head = format!("{}.", name.head_prefix());
        model
            .store()
            .assign(all.iter().filter(|(k, _)| k.starts_with(&head)).map(|(k, t)| (k.as_str(), t)), Some(Group::Head))
            .unwrap();

        let io = candle_core::safetensors::load(&io_path, &Device::Cpu).unwrap();
        let got = model.forward(&io["input"], &mut Pass::eval()).unwrap();
        let want = &io["logits"];
        assert_eq!(got.dims(), want.dims());
        let got: Vec<f32> = got.flatten_all().unwrap().to_vec1().unwrap();
        let want: Vec<f32> = want.flatten_all().unwrap().to_vec1().unwrap();
        let scale = want.iter().fold(1f32, |m, v| m.max(v.abs()));
        let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        eprintln!("{}: max |diff| {worst:e}, logit scale {scale:e}", name.as_str());
        assert!(worst <= RELATIVE_TOLERANCE * scale, "{}: max |diff| {worst} vs scale {scale}", name.as_str());
    }
}
