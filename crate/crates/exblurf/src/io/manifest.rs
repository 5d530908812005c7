//! Dataset manifest: a versioned JSON index of per-view images, intrinsics,
//! initial poses, and optional ground-truth trajectories, with loaders that
//! materialize the referenced images.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::se3::{BezierTrajectory, Pose, Twist};
use crate::synth::{Dataset, TestView, ViewObservation};
use crate::voxel::Bounds;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Row-major rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation();
        PoseRecord {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [
                pose.translation()[0],
                pose.translation()[1],
                pose.translation()[2],
            ],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let r = self.rotation;
        Pose::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2],
                r[1][0], r[1][1], r[1][2],
                r[2][0], r[2][1], r[2][2],
            ),
            Vector3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }
}

/// Control twists in (wx, wy, wz, nx, ny, nz) coordinate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub control_twists: Vec<[f64; 6]>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &BezierTrajectory) -> Self {
        TrajectoryRecord {
            control_twists: traj.control_twists().iter().map(Twist::to_array).collect(),
        }
    }

    pub fn to_trajectory(&self) -> Result<BezierTrajectory> {
        BezierTrajectory::new(
            self.control_twists
                .iter()
                .map(|&a| Twist::from_array(a))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub blurry: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blurry_preview: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp: Option<String>,
    pub intrinsics: Intrinsics,
    pub initial_pose: PoseRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_trajectory: Option<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestViewRecord {
    pub sharp: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp_preview: Option<String>,
    pub intrinsics: Intrinsics,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub bounds: Bounds,
    pub views: Vec<ViewRecord>,
    pub test_views: Vec<TestViewRecord>,
}

impl DatasetManifest {
    /// Parse and structurally validate (no filesystem access).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json_string(&self) -> Result<String> {
        super::to_json_pretty(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest: unrecognized version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        Bounds::new(self.bounds.min, self.bounds.max)?;
        for (i, view) in self.views.iter().enumerate() {
            view.intrinsics
                .validate()
                .map_err(|e| Error::Format(format!("manifest: view {i}: {e}")))?;
            view.initial_pose
                .to_pose()
                .map_err(|e| Error::Format(format!("manifest: view {i} pose: {e}")))?;
            if let Some(traj) = &view.gt_trajectory {
                traj.to_trajectory()
                    .map_err(|e| Error::Format(format!("manifest: view {i} trajectory: {e}")))?;
            }
        }
        for (i, tv) in self.test_views.iter().enumerate() {
            tv.intrinsics
                .validate()
                .map_err(|e| Error::Format(format!("manifest: test view {i}: {e}")))?;
            tv.pose
                .to_pose()
                .map_err(|e| Error::Format(format!("manifest: test view {i} pose: {e}")))?;
        }
        Ok(())
    }

    /// All referenced image paths, relative to the dataset directory.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut files = Vec::new();
        for v in &self.views {
            files.push(v.blurry.as_str());
            if let Some(p) = &v.blurry_preview {
                files.push(p.as_str());
            }
            if let Some(p) = &v.sharp {
                files.push(p.as_str());
            }
        }
        for t in &self.test_views {
            files.push(t.sharp.as_str());
            if let Some(p) = &t.sharp_preview {
                files.push(p.as_str());
            }
        }
        files
    }
}

/// Write dataset images (PFM data of record plus PNG previews) and the
/// manifest into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetManifest> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut views = Vec::with_capacity(dataset.views.len());
    for (i, view) in dataset.views.iter().enumerate() {
        let blurry = format!("images/view_{i:03}_blurry.pfm");
        let preview = format!("images/view_{i:03}_blurry.png");
        super::pfm::write(&dir.join(&blurry), &view.blurry)?;
        super::png::write(&dir.join(&preview), &view.blurry)?;
        let sharp = match &view.sharp {
            Some(img) => {
                let path = format!("images/view_{i:03}_sharp.pfm");
                super::pfm::write(&dir.join(&path), img)?;
                super::png::write(&dir.join(format!("images/view_{i:03}_sharp.png")), img)?;
                Some(path)
            }
            None => None,
        };
        views.push(ViewRecord {
            blurry,
            blurry_preview: Some(preview),
            sharp,
            intrinsics: view.intrinsics,
            initial_pose: PoseRecord::from_pose(&view.initial_pose),
            gt_trajectory: view.gt_trajectory.as_ref().map(TrajectoryRecord::from_trajectory),
        });
    }
    let mut test_views = Vec::with_capacity(dataset.test_views.len());
    for (i, tv) in dataset.test_views.iter().enumerate() {
        let sharp = format!("images/test_{i:03}_sharp.pfm");
        let preview = format!("images/test_{i:03}_sharp.png");
        super::pfm::write(&dir.join(&sharp), &tv.sharp)?;
        super::png::write(&dir.join(&preview), &tv.sharp)?;
        test_views.push(TestViewRecord {
            sharp,
            sharp_preview: Some(preview),
            intrinsics: tv.intrinsics,
            pose: PoseRecord::from_pose(&tv.pose),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        bounds: dataset.bounds,
        views,
        test_views,
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json_string()?)?;
    Ok(manifest)
}

/// Parse the manifest in `dir`, verify every referenced file exists, and
/// load the images.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let manifest = DatasetManifest::from_json_str(&text)?;
    for rel in manifest.referenced_files() {
        let p: PathBuf = dir.join(rel);
        if !p.is_file() {
            return Err(Error::Format(format!(
                "manifest references missing file {rel}"
            )));
        }
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for record in &manifest.views {
        let blurry = super::pfm::read(&dir.join(&record.blurry))?;
        let sharp = match &record.sharp {
            Some(rel) => Some(super::pfm::read(&dir.join(rel))?),
            None => None,
        };
        views.push(ViewObservation {
            blurry,
            sharp,
            intrinsics: record.intrinsics,
            initial_pose: record.initial_pose.to_pose()?,
            gt_trajectory: record
                .gt_trajectory
                .as_ref()
                .map(|t| t.to_trajectory())
                .transpose()?,
        });
    }
    let mut test_views = Vec::with_capacity(manifest.test_views.len());
    for record in &manifest.test_views {
        test_views.push(TestView {
            sharp: super::pfm::read(&dir.join(&record.sharp))?,
            pose: record.pose.to_pose()?,
            intrinsics: record.intrinsics,
        });
    }
    let dataset = Dataset {
        bounds: manifest.bounds,
        views,
        test_views,
    };
    Ok((manifest, dataset))
}
