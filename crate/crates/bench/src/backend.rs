use std::sync::Arc;

use canon_core::bridge::RemoteBackend;
use canon_core::energy::{make_linear_schedule, LocalModel, LocalModelBackend};
use canon_core::synthetic::{ChromaBackend, GammaProbeBackend, UprightBackend};
use canon_core::{BackendError, EnergyBackend, Image, Logits, NoiseSchedule};

use crate::config::{BackendSection, BackendType};
use crate::error::{BenchError, Result};

/// A scoring backend with the noise schedule its timesteps refer to.
#[derive(Clone)]
pub struct ScoringSetup {
    pub backend: Arc<dyn EnergyBackend>,
    pub schedule: NoiseSchedule,
}

pub fn build_backend(section: &BackendSection, crop_disk: bool) -> Result<ScoringSetup> {
    let synthetic_schedule = || {
        make_linear_schedule(section.num_timesteps, section.beta_start, section.beta_end)
            .map_err(|e| BenchError::Config(format!("[backend] schedule: {e}")))
    };
    let (backend, schedule): (Arc<dyn EnergyBackend>, NoiseSchedule) = match section.kind {
        BackendType::SyntheticUpright => (Arc::new(UprightBackend), synthetic_schedule()?),
        BackendType::SyntheticChroma => (Arc::new(ChromaBackend { bands: section.bands }), synthetic_schedule()?),
        BackendType::SyntheticGamma => (Arc::new(GammaProbeBackend { bands: section.bands }), synthetic_schedule()?),
        BackendType::Local => {
            let path = section
                .model
                .as_ref()
                .ok_or_else(|| BenchError::Config("[backend] type = \"local\" needs `model`".into()))?;
            let model = LocalModel::load(path).map_err(|e| BenchError::Config(e.to_string()))?;
            let backend = LocalModelBackend::new(model)?;
            let schedule = backend.schedule().clone();
            (Arc::new(backend), schedule)
        }
        BackendType::Remote => {
            let backend = RemoteBackend::connect(section.remote_config()?)?;
            let schedule = backend.schedule().clone();
            (Arc::new(backend), schedule)
        }
    };
    let backend: Arc<dyn EnergyBackend> = if crop_disk {
        Arc::new(CroppingBackend { inner: backend })
    } else {
        backend
    };
    Ok(ScoringSetup { backend, schedule })
}

/// Scores the inscribed square of every image, hiding rotation fill corners.
pub struct CroppingBackend {
    pub inner: Arc<dyn EnergyBackend>,
}

impl EnergyBackend for CroppingBackend {
    fn logits(&self, image: &Image, prompts: &[String]) -> Result<Logits, BackendError> {
        self.inner.logits(&image.crop_inscribed_square(), prompts)
    }

    fn denoise_error(&self, image: &Image, timestep: usize, seed: u64) -> Result<f64, BackendError> {
        self.inner.denoise_error(&image.crop_inscribed_square(), timestep, seed)
    }

    fn descriptor(&self) -> String {
        format!("{} (inscribed-square crop)", self.inner.descriptor())
    }
}

/// Seed for the corruption applied to one image, stable across reruns and
/// partial runs: the first 8 bytes of SHA-256 over the global seed, a
/// purpose tag and the image id.
pub fn corruption_seed(global: u64, purpose: &str, id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_seeds_depend_on_every_input() {
        let a = corruption_seed(1, "color", "img0");
        assert_eq!(a, corruption_seed(1, "color", "img0"));
        assert_ne!(a, corruption_seed(2, "color", "img0"));
        assert_ne!(a, corruption_seed(1, "gamma", "img0"));
        assert_ne!(a, corruption_seed(1, "color", "img1"));
    }

    #[test]
    fn cropping_backend_sees_the_inscribed_square() {
        let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let inner = canon_core::synthetic::FnBackend::new(
            move |img: &Image, p: &[String]| {
                log.lock().unwrap().push((img.height(), img.width()));
                vec![0.0; p.len()]
            },
            |_, _, _| 0.0,
        );
        let b = CroppingBackend { inner: Arc::new(inner) };
        b.logits(&Image::filled(32, 32, [0.5; 3]).unwrap(), &["x".into()]).unwrap();
        assert_eq!(seen.lock().unwrap()[0], (22, 22));
    }

    #[test]
    fn unreachable_remote_is_a_backend_error() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let section = BackendSection {
            kind: BackendType::Remote,
            url: Some(format!("http://127.0.0.1:{port}")),
            timeout_ms: 500,
            ..Default::default()
        };
        let err = build_backend(&section, false).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains(&format!("127.0.0.1:{port}")));
    }
}
