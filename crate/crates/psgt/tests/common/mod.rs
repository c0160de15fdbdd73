//! Synthetic fixtures shared by the integration suites: subjects whose
//! labels follow a learnable function of the voice features, and a writer
//! that renders them as a canonical telemonitoring CSV.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psgt::dataset::{Record, SubjectSeries, CANONICAL_HEADER, VOICE_FEATURES};

/// A subject whose label is `10 + 5 v0 + 3 v1 + offset` plus optional noise:
/// zero offset mirrors the generating process of other zero-offset subjects,
/// a large offset produces data that disagrees with them.
pub fn synth_subject(
    subject_id: u32,
    n: usize,
    offset: f64,
    noise: f64,
    rng_seed: u64,
) -> SubjectSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut voice = [0.0; VOICE_FEATURES];
        for v in voice.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let wobble = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
        let motor: f64 = 10.0 + 5.0 * voice[0] + 3.0 * voice[1] + offset + wobble;
        records.push(Record {
            subject_id,
            age: 55 + (subject_id % 20),
            sex: (subject_id % 2) as u8,
            test_time: i as f64 * 3.5,
            motor_updrs: motor.clamp(0.0, 108.0),
            total_updrs: (motor + 9.0).clamp(0.0, 176.0),
            voice,
        });
    }
    SubjectSeries { subject_id, records }
}

/// Renders subjects as a canonical-header CSV under `dir` and returns its
/// path. Floats print in shortest round-trip form, so loading the file
/// reproduces the in-memory values exactly.
pub fn write_csv(dir: &Path, name: &str, subjects: &[SubjectSeries]) -> PathBuf {
    let mut text = CANONICAL_HEADER.join(",");
    text.push('\n');
    for subject in subjects {
        for rec in &subject.records {
            let voice: Vec<String> = rec.voice.iter().map(|v| format!("{v}")).collect();
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                rec.subject_id,
                rec.age,
                rec.sex,
                rec.test_time,
                rec.motor_updrs,
                rec.total_updrs,
                voice.join(",")
            ));
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, text).expect("fixture CSV must be writable");
    path
}
