//! Square-window grids over the normalized frame.
//!
//! Positions run `0, stride, 2 * stride, ...` on each axis and stop at the
//! last window that fits; no extra window is anchored to the right or bottom
//! border. Output is row-major with `y` as the outer loop.

use serde::{Deserialize, Serialize};

use crate::error::{MopError, Result};

/// Scale level of a patch: `L1` is the whole frame, `L2` and `L3` the finer
/// grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::L3];

    pub fn index(self) -> usize {
        match self {
            Level::L1 => 0,
            Level::L2 => 1,
            Level::L3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "level1",
            Level::L2 => "level2",
            Level::L3 => "level3",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Level {
    type Err = MopError;

    fn from_str(s: &str) -> Result<Level> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "level1" | "1" => Ok(Level::L1),
            "l2" | "level2" | "2" => Ok(Level::L2),
            "l3" | "level3" | "3" => Ok(Level::L3),
            _ => Err(MopError::invalid(format!("unknown level {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub level: Level,
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl PatchSpec {
    pub fn fits(&self, frame: usize) -> bool {
        self.side >= 1 && self.x + self.side <= frame && self.y + self.side <= frame
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_frame")]
    pub frame: usize,
    #[serde(default = "default_level_sides")]
    pub level_sides: Vec<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_frame() -> usize {
    256
}

fn default_level_sides() -> Vec<usize> {
    vec![256, 128, 64]
}

fn default_stride() -> usize {
    32
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            frame: default_frame(),
            level_sides: default_level_sides(),
            stride: default_stride(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(MopError::invalid("grid stride must be >= 1"));
        }
        if self.frame == 0 {
            return Err(MopError::invalid("grid frame must be >= 1"));
        }
        if self.level_sides.len() != Level::ALL.len() {
            return Err(MopError::invalid(format!(
                "grid needs {} level sides, got {}",
                Level::ALL.len(),
                self.level_sides.len()
            )));
        }
        for &side in &self.level_sides {
            if side == 0 || side > self.frame {
                return Err(MopError::invalid(format!(
                    "patch side {side} does not fit frame {}",
                    self.frame
                )));
            }
        }
        Ok(())
    }

    pub fn side(&self, level: Level) -> usize {
        self.level_sides[level.index()]
    }

    pub fn grid(&self, level: Level) -> Result<Vec<PatchSpec>> {
        self.validate()?;
        grid_positions(self.frame, self.side(level), self.stride).map(|positions| {
            positions
                .map(|(x, y)| PatchSpec {
                    level,
                    x,
                    y,
                    side: self.side(level),
                })
                .collect()
        })
    }

    /// Number of windows per axis at `level`.
    pub fn per_axis(&self, level: Level) -> usize {
        per_axis(self.frame, self.side(level), self.stride)
    }
}

/// `floor((frame - side) / stride) + 1`.
pub fn per_axis(frame: usize, side: usize, stride: usize) -> usize {
    (frame - side) / stride + 1
}

fn grid_positions(
    frame: usize,
    side: usize,
    stride: usize,
) -> Result<impl Iterator<Item = (usize, usize)>> {
    if stride == 0 {
        return Err(MopError::invalid("stride must be >= 1"));
    }
    if side == 0 || side > frame {
        return Err(MopError::invalid(format!(
            "window side {side} does not fit frame {frame}"
        )));
    }
    let n = per_axis(frame, side, stride);
    Ok((0..n).flat_map(move |j| (0..n).map(move |i| (i * stride, j * stride))))
}

/// Sliding windows for best-window search, ordered by side (largest first)
/// and then row-major. Windows carry `Level::L1` since each is treated as a
/// whole image once resampled.
pub fn sliding_windows(frame: usize, sides: &[usize], stride: usize) -> Result<Vec<PatchSpec>> {
    let mut sorted = sides.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = Vec::new();
    for side in sorted {
        out.extend(grid_positions(frame, side, stride)?.map(|(x, y)| PatchSpec {
            level: Level::L1,
            x,
            y,
            side,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_level_counts() {
        let cfg = GridConfig::default();
        assert_eq!(cfg.grid(Level::L2).unwrap().len(), 25);
        assert_eq!(cfg.grid(Level::L3).unwrap().len(), 49);
        let l1 = cfg.grid(Level::L1).unwrap();
        assert_eq!(
            l1,
            vec![PatchSpec {
                level: Level::L1,
                x: 0,
                y: 0,
                side: 256
            }]
        );
    }

    #[test]
    fn row_major_order() {
        let cfg = GridConfig::default();
        let g = cfg.grid(Level::L2).unwrap();
        assert_eq!((g[1].x, g[1].y), (32, 0));
        assert_eq!((g[5].x, g[5].y), (0, 32));
        assert_eq!((g[24].x, g[24].y), (128, 128));
    }

    #[test]
    fn oversized_side_rejected() {
        let cfg = GridConfig {
            frame: 100,
            level_sides: vec![100, 128, 64],
            stride: 32,
        };
        assert!(cfg.grid(Level::L2).is_err());
        assert!(sliding_windows(100, &[120], 16).is_err());
        assert!(sliding_windows(100, &[50], 0).is_err());
    }

    #[test]
    fn sliding_window_counts() {
        assert_eq!(sliding_windows(256, &[224], 16).unwrap().len(), 9);
        assert_eq!(sliding_windows(256, &[256], 16).unwrap().len(), 1);
        let all = sliding_windows(256, &[128, 160, 224, 192], 16).unwrap();
        assert_eq!(all.len(), 9 + 25 + 49 + 81);
        assert_eq!(all[0].side, 224);
        assert_eq!(all.last().unwrap().side, 128);
    }

    #[test]
    fn uneven_grid_stops_inside() {
        // (100 - 30) / 32 = 2 -> positions 0, 32, 64; 64 + 30 = 94 <= 100
        let w = sliding_windows(100, &[30], 32).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!(w.last().unwrap().x, 64);
    }

    proptest! {
        #[test]
        fn counts_and_bounds(frame in 1usize..300, side_frac in 0.01f64..1.0, stride in 1usize..64) {
            let side = ((frame as f64 * side_frac).ceil() as usize).clamp(1, frame);
            let w = sliding_windows(frame, &[side], stride).unwrap();
            let n = (frame - side) / stride + 1;
            prop_assert_eq!(w.len(), n * n);
            prop_assert!(w.iter().all(|p| p.fits(frame)));
        }
    }
}
