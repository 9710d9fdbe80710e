//! Token data model: visual token grids, text prompt tokens, and positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether patch index 0 of every frame carries the encoder's global [CLS] token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsPolicy {
    #[default]
    None,
    FirstIndex,
}

/// Address of one visual token. Serializes as `[frame, patch]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenIndex {
    pub frame: usize,
    pub patch: usize,
}

impl TokenIndex {
    pub const fn new(frame: usize, patch: usize) -> Self {
        Self { frame, patch }
    }
}

impl From<[usize; 2]> for TokenIndex {
    fn from([frame, patch]: [usize; 2]) -> Self {
        Self { frame, patch }
    }
}

impl From<TokenIndex> for [usize; 2] {
    fn from(ix: TokenIndex) -> Self {
        [ix.frame, ix.patch]
    }
}

/// Dense `frames x patches x dim` grid of projected visual tokens, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    n_frames: usize,
    n_patches: usize,
    dim: usize,
    data: Vec<f32>,
    cls_policy: ClsPolicy,
}

impl TokenTensor {
    pub fn new(
        n_frames: usize,
        n_patches: usize,
        dim: usize,
        data: Vec<f32>,
        cls_policy: ClsPolicy,
    ) -> Result<Self> {
        if n_frames == 0 || n_patches == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "all extents must be positive, got {n_frames}x{n_patches}x{dim}"
            )));
        }
        let expected = n_frames
            .checked_mul(n_patches)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Shape("extent product overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not equal {n_frames}x{n_patches}x{dim} = {expected}",
                data.len()
            )));
        }
        if cls_policy == ClsPolicy::FirstIndex && n_patches < 2 {
            return Err(Error::Shape(
                "cls_policy first_index requires at least 2 patches per frame".into(),
            ));
        }
        check_finite(&data)?;
        Ok(Self {
            n_frames,
            n_patches,
            dim,
            data,
            cls_policy,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cls_policy(&self) -> ClsPolicy {
        self.cls_policy
    }

    pub fn has_cls(&self) -> bool {
        self.cls_policy == ClsPolicy::FirstIndex
    }

    /// Total number of token positions, `n_frames * n_patches`.
    pub fn len(&self) -> usize {
        self.n_frames * self.n_patches
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn token(&self, frame: usize, patch: usize) -> &[f32] {
        let start = (frame * self.n_patches + patch) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn at(&self, ix: TokenIndex) -> &[f32] {
        self.token(ix.frame, ix.patch)
    }

    pub fn frame(&self, frame: usize) -> &[f32] {
        let len = self.n_patches * self.dim;
        &self.data[frame * len..(frame + 1) * len]
    }

    /// The [CLS] vector of `frame`, when the tensor carries one.
    pub fn cls(&self, frame: usize) -> Option<&[f32]> {
        self.has_cls().then(|| self.token(frame, 0))
    }

    /// First patch index that holds a content (non-[CLS]) token.
    pub fn first_content_patch(&self) -> usize {
        usize::from(self.has_cls())
    }

    /// Copy of the content tokens only, dropping the per-frame [CLS] slot.
    pub fn without_cls(&self) -> TokenTensor {
        if !self.has_cls() {
            return self.clone();
        }
        let n = self.n_patches - 1;
        let mut data = Vec::with_capacity(self.n_frames * n * self.dim);
        for f in 0..self.n_frames {
            data.extend_from_slice(&self.frame(f)[self.dim..]);
        }
        TokenTensor {
            n_frames: self.n_frames,
            n_patches: n,
            dim: self.dim,
            data,
            cls_policy: ClsPolicy::None,
        }
    }

    /// Elementwise multiply by `c`; `c` must be finite.
    pub fn scaled(&self, c: f32) -> TokenTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// Projected text prompt embeddings, `length x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTokens {
    length: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TextTokens {
    pub fn new(length: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if length == 0 {
            return Err(Error::EmptyText);
        }
        if dim == 0 {
            return Err(Error::Shape("text dim must be positive".into()));
        }
        if data.len() != length * dim {
            return Err(Error::Shape(format!(
                "text data length {} does not equal {length}x{dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { length, dim, data })
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, l: usize) -> &[f32] {
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

pub(crate) fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}
