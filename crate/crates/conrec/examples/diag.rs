// diagnostics: raw-pixel probe baselines + representation quality of a checkpoint
use conrec::eval::{fit_probe, probe_accuracy, extract_representations, RepresentationMatrix};
use conrec::synthgen::load_dataset;
use conrec::train::load_checkpoint;
use std::path::Path;

fn raw_matrix(ds: &conrec::synthgen::LabeledDataset) -> RepresentationMatrix {
    let f = ds.image_size * ds.image_size;
    let mut features = Vec::with_capacity(ds.len() * f);
    for img in &ds.images {
        features.extend_from_slice(img.data());
    }
    RepresentationMatrix {
        features, n: ds.len(), f,
        labels: ds.labels.clone(), class_count: ds.class_count,
        dataset: ds.name.clone(), model_digest: 0,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train = load_dataset(Path::new(&args[1])).unwrap();
    let test = load_dataset(Path::new(&args[2])).unwrap();

    let probe = fit_probe(&raw_matrix(&train), 1e-4, 200, 1e-6).unwrap();
    let acc = probe_accuracy(&probe, &raw_matrix(&test)).unwrap();
    println!("raw-pixel probe: {acc:.4}");

    for ckpt_path in &args[3..] {
        let ckpt = load_checkpoint(Path::new(ckpt_path)).unwrap();
        let tr = extract_representations(&ckpt.params, &train, 32).unwrap();
        let te = extract_representations(&ckpt.params, &test, 32).unwrap();
        let probe = fit_probe(&tr, 1e-4, 500, 1e-7).unwrap();
        let acc = probe_accuracy(&probe, &te).unwrap();
        println!("{ckpt_path}: probe {acc:.4} (f={})", tr.f);
    }
}
