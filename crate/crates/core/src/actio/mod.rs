//! Activation-matrix I/O: NPY/NPZ codecs, patch manifests, patch geometry,
//! and shared patch-set construction.

mod bundle;
mod geometry;
mod manifest;
mod npy;

pub use bundle::{
    bundle_from_members, load_bundle, load_npz, member_name, read_npz_members, save_bundle,
    save_npz, write_atomic, write_npz_members, ActivationMatrix, Bundle, LinearHead, HEAD_BIAS,
    HEAD_WEIGHTS,
};
pub use geometry::patch_grid;
pub use manifest::{union_image_sets, PatchEntry, PatchManifest, ProposalRows, Rect};
pub use npy::{read_npy, read_npy_vector, write_npy};
