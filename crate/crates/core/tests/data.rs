use volo::data::{nearest_template_accuracy, SyntheticDataset};

#[test]
fn noiseless_samples_are_separable() {
    let d = SyntheticDataset {
        noise_std: 0.0,
        ..SyntheticDataset::default()
    };
    let s = d.generate::<f64>().unwrap();
    assert_eq!(nearest_template_accuracy(&s, &d.templates().unwrap()), 1.0);
}

#[test]
fn generation_is_deterministic_and_balanced() {
    let d = SyntheticDataset::default();
    let a = d.generate::<f32>().unwrap();
    assert_eq!(a, d.generate::<f32>().unwrap());
    let other = SyntheticDataset { seed: 1, ..d }.generate::<f32>().unwrap();
    assert_ne!(a.images, other.images);
    for class in 0..d.num_classes {
        assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), d.samples_per_class);
    }
}

#[test]
fn sample_means_track_template_means() {
    let d = SyntheticDataset {
        num_classes: 2,
        samples_per_class: 5_000,
        image_size: 4,
        ..SyntheticDataset::default()
    };
    let s = d.generate::<f64>().unwrap();
    let t = d.templates().unwrap();
    let per = 4 * 4 * 3;
    for class in 0..2 {
        let template_mean = t.data()[class * per..(class + 1) * per].iter().sum::<f64>() / per as f64;
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, _) in s.labels.iter().enumerate().filter(|(_, &l)| l == class) {
            sum += s.images.data()[i * per..(i + 1) * per].iter().sum::<f64>();
            count += per;
        }
        let mean = sum / count as f64;
        assert!((mean - template_mean).abs() <= 0.1, "class {class}: {mean} vs {template_mean}");
    }
}
