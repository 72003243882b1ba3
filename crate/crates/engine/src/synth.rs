//! Seeded synthetic populations and a brute-force nearest-centroid oracle.
//!
//! Each identity gets one face centroid and one voice centroid drawn
//! uniformly on their unit spheres, rejection-sampled so no two identities
//! are closer than a cosine bound in either modality. Shots and query
//! windows perturb a centroid by a random rotation whose angle is
//! |N(0, sigma)|, so the noise parameter is an angular standard deviation
//! independent of the embedding dimension.
//!
//! The oracle classifies by exhaustive nearest-centroid scan per modality
//! and shares no code with the attention path; it exists to check it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::EngineError;
use crate::pipeline::{WindowQuery, WindowStream, DEFAULT_BASE_WINDOW};
use crate::store::{KnowledgeStore, ModalEmbedding, Modality, ShotRecord, StoreConfig};

/// Parameters of a synthetic population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub n_ids: usize,
    pub shots_per_id: usize,
    pub d_face: usize,
    pub d_voice: usize,
    /// Angular noise (radians) applied to face / voice draws.
    pub face_noise: f32,
    pub voice_noise: f32,
    /// Matched : non-matched window counts in the generated stream.
    pub distractor_ratio: (u32, u32),
    /// Held-out matched query windows generated per identity.
    pub queries_per_id: usize,
    /// Rejection-sampling bound: pairwise centroid cosine must not exceed
    /// this in either modality.
    pub max_centroid_cos: f32,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_ids: 2,
            shots_per_id: 5,
            d_face: 512,
            d_voice: 512,
            face_noise: 0.0,
            voice_noise: 0.0,
            distractor_ratio: (1, 4),
            queries_per_id: 2,
            max_centroid_cos: 0.8,
            seed: 0,
        }
    }
}

/// Ground-truth centroids for one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdCentroids {
    pub label: String,
    pub face: Vec<f32>,
    pub voice: Vec<f32>,
}

/// A generated population: enrolled store, held-out stream, the raw shot
/// records behind the store, and the oracle's centroids.
#[derive(Debug, Clone)]
pub struct Population {
    pub store: KnowledgeStore,
    pub stream: WindowStream,
    pub shots: Vec<ShotRecord>,
    pub centroids: Vec<IdCentroids>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Rotate `center` by angle `theta` toward a uniformly random tangent
/// direction, staying on the unit sphere.
fn perturb(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 || center.len() < 2 {
        return center.to_vec();
    }
    let theta = (gaussian(rng) * sigma).abs();
    // tangent direction: random vector with the radial component removed
    let tangent = loop {
        let g = unit_vector(rng, center.len());
        let radial = cosine(&g, center);
        let mut t: Vec<f64> = g
            .iter()
            .zip(center)
            .map(|(&gi, &ci)| gi - radial * ci)
            .collect();
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in t.iter_mut() {
                *x /= norm;
            }
            break t;
        }
    };
    center
        .iter()
        .zip(&tangent)
        .map(|(&c, &t)| theta.cos() * c + theta.sin() * t)
        .collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Draw a seeded synthetic population.
pub fn generate_population(spec: &PopulationSpec) -> Result<Population, EngineError> {
    if spec.n_ids == 0 {
        return Err(EngineError::InvalidSpec {
            message: "n_ids must be at least 1".into(),
        });
    }
    if spec.shots_per_id == 0 {
        return Err(EngineError::InvalidSpec {
            message: "shots_per_id must be at least 1".into(),
        });
    }
    if spec.face_noise < 0.0 || spec.voice_noise < 0.0 {
        return Err(EngineError::InvalidSpec {
            message: "noise must be non-negative".into(),
        });
    }
    if spec.d_face == 0 || spec.d_voice == 0 {
        return Err(EngineError::InvalidSpec {
            message: "embedding dimensions must be positive".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_cos = f64::from(spec.max_centroid_cos);

    // rejection-sampled centroids: separation is a precondition, not luck
    let mut face_centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.n_ids);
    let mut voice_centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.n_ids);
    for _ in 0..spec.n_ids {
        let mut attempts = 0;
        let (face, voice) = loop {
            attempts += 1;
            if attempts > 100_000 {
                return Err(EngineError::InvalidSpec {
                    message: format!(
                        "cannot place {} identities with pairwise cosine <= {} at dims {}x{}",
                        spec.n_ids, spec.max_centroid_cos, spec.d_face, spec.d_voice
                    ),
                });
            }
            let face = unit_vector(&mut rng, spec.d_face);
            let voice = unit_vector(&mut rng, spec.d_voice);
            let face_ok = face_centroids.iter().all(|c| cosine(c, &face) <= max_cos);
            let voice_ok = voice_centroids.iter().all(|c| cosine(c, &voice) <= max_cos);
            if face_ok && voice_ok {
                break (face, voice);
            }
        };
        face_centroids.push(face);
        voice_centroids.push(voice);
    }

    let centroids: Vec<IdCentroids> = (0..spec.n_ids)
        .map(|i| IdCentroids {
            label: format!("id{i:03}"),
            face: to_f32(&face_centroids[i]),
            voice: to_f32(&voice_centroids[i]),
        })
        .collect();

    // enrollment shots, identity-major
    let mut shots = Vec::with_capacity(spec.n_ids * spec.shots_per_id);
    let mut store = KnowledgeStore::new(StoreConfig::with_dims(spec.d_face, spec.d_voice));
    for i in 0..spec.n_ids {
        for _ in 0..spec.shots_per_id {
            let record = ShotRecord {
                face_id: centroids[i].label.clone(),
                voice_id: centroids[i].label.clone(),
                face: to_f32(&perturb(&mut rng, &face_centroids[i], f64::from(spec.face_noise))),
                voice: to_f32(&perturb(&mut rng, &voice_centroids[i], f64::from(spec.voice_noise))),
            };
            store.enroll_record(&record)?;
            shots.push(record);
        }
    }

    // held-out queries: matched windows disjoint from the enrollment draws,
    // interleaved with non-matched distractor windows per the ratio
    let (matched_per, distractor_per) = spec.distractor_ratio;
    let mut windows = Vec::new();
    let mut index = 0u64;
    let push_window = |windows: &mut Vec<WindowQuery>,
                           index: &mut u64,
                           face: Vec<f32>,
                           voice: Vec<f32>,
                           gt: Option<String>|
     -> Result<(), EngineError> {
        let t_start = *index as f64 * DEFAULT_BASE_WINDOW;
        windows.push(WindowQuery {
            index: *index,
            t_start,
            t_end: t_start + DEFAULT_BASE_WINDOW,
            faces: vec![ModalEmbedding::new(face, Modality::Face)?],
            voice: ModalEmbedding::new(voice, Modality::Voice)?,
            ground_truth: gt,
        });
        *index += 1;
        Ok(())
    };

    for i in 0..spec.n_ids {
        for _ in 0..spec.queries_per_id {
            push_window(
                &mut windows,
                &mut index,
                to_f32(&perturb(&mut rng, &face_centroids[i], f64::from(spec.face_noise))),
                to_f32(&perturb(&mut rng, &voice_centroids[i], f64::from(spec.voice_noise))),
                Some(centroids[i].label.clone()),
            )?;
            if spec.n_ids > 1 && matched_per > 0 {
                let distractors =
                    (u64::from(distractor_per) / u64::from(matched_per)) as usize;
                for _ in 0..distractors {
                    let a = rng.gen_range(0..spec.n_ids);
                    let b = loop {
                        let b = rng.gen_range(0..spec.n_ids);
                        if b != a {
                            break b;
                        }
                    };
                    push_window(
                        &mut windows,
                        &mut index,
                        to_f32(&perturb(&mut rng, &face_centroids[a], f64::from(spec.face_noise))),
                        to_f32(&perturb(&mut rng, &voice_centroids[b], f64::from(spec.voice_noise))),
                        None,
                    )?;
                }
            }
        }
    }

    Ok(Population {
        store,
        stream: WindowStream {
            base_window: DEFAULT_BASE_WINDOW,
            windows,
        },
        shots,
        centroids,
    })
}

/// Nearest-centroid decision by exhaustive scan: pick the best identity per
/// modality independently; name it only when both modalities agree and both
/// cosines clear the threshold.
pub fn oracle_predict(
    centroids: &[IdCentroids],
    window: &WindowQuery,
    tau_oracle: f32,
) -> Option<usize> {
    if window.faces.is_empty() || centroids.is_empty() {
        return None;
    }
    let mut best_face = (0usize, f32::NEG_INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        for face in &window.faces {
            let mut cos = 0.0f32;
            for (a, b) in face.values().iter().zip(&c.face) {
                cos += a * b;
            }
            if cos > best_face.1 {
                best_face = (i, cos);
            }
        }
    }
    let mut best_voice = (0usize, f32::NEG_INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let mut cos = 0.0f32;
        for (a, b) in window.voice.values().iter().zip(&c.voice) {
            cos += a * b;
        }
        if cos > best_voice.1 {
            best_voice = (i, cos);
        }
    }
    if best_face.0 == best_voice.0 && best_face.1 > tau_oracle && best_voice.1 > tau_oracle {
        Some(best_face.0)
    } else {
        None
    }
}
