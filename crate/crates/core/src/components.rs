//! Two-pass union-find labeling of binary masks.

use serde::{Deserialize, Serialize};

use crate::imaging::VegetationMask;

/// Pixel adjacency used when growing components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn with_capacity(n: usize) -> Self {
        Self {
            parent: Vec::with_capacity(n),
        }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            // path halving
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Links the larger root under the smaller one so roots stay the
    /// earliest-seen provisional label.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Result of labeling: one label per pixel (0 = background, components are
/// numbered 1.. in raster order of their first pixel) and per-label areas.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    /// `areas[k]` is the pixel count of component `k + 1`.
    pub areas: Vec<usize>,
}

impl Labeling {
    pub fn component_count(&self) -> usize {
        self.areas.len()
    }
}

pub fn label_components(mask: &VegetationMask, connectivity: Connectivity) -> Labeling {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    // provisional label + 1 per pixel; 0 is background
    let mut provisional = vec![0u32; w * h];
    let mut sets = DisjointSet::with_capacity(64);

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |label: u32| {
                if label != 0 {
                    neighbours[n] = label;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[i - 1]);
            }
            if y > 0 {
                push(provisional[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[i - w + 1]);
                    }
                }
            }
            if n == 0 {
                provisional[i] = sets.make_set() + 1;
            } else {
                let min = *neighbours[..n].iter().min().unwrap();
                provisional[i] = min;
                for &other in &neighbours[..n] {
                    sets.union(min - 1, other - 1);
                }
            }
        }
    }

    let mut final_of_root = vec![0u32; sets.parent.len()];
    let mut areas = Vec::new();
    let mut labels = provisional;
    for label in labels.iter_mut() {
        if *label == 0 {
            continue;
        }
        let root = sets.find(*label - 1) as usize;
        if final_of_root[root] == 0 {
            areas.push(0);
            final_of_root[root] = areas.len() as u32;
        }
        let l = final_of_root[root];
        areas[l as usize - 1] += 1;
        *label = l;
    }

    Labeling {
        width: mask.width(),
        height: mask.height(),
        labels,
        areas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> VegetationMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        VegetationMask::from_fn(w, h, |x, y| rows[y as usize].as_bytes()[x as usize] == b'#')
    }

    #[test]
    fn diagonal_depends_on_connectivity() {
        let m = mask(&["#.", ".#"]);
        assert_eq!(label_components(&m, Connectivity::Four).component_count(), 2);
        assert_eq!(label_components(&m, Connectivity::Eight).component_count(), 1);
    }

    #[test]
    fn u_shape_merges() {
        let m = mask(&["#.#", "#.#", "###"]);
        let l = label_components(&m, Connectivity::Four);
        assert_eq!(l.areas, vec![7]);
        assert!(l.labels.iter().all(|&v| v <= 1));
    }

    #[test]
    fn labels_follow_raster_order() {
        let m = mask(&["..#", "#..", "..."]);
        let l = label_components(&m, Connectivity::Four);
        assert_eq!(l.labels[2], 1);
        assert_eq!(l.labels[3], 2);
        assert_eq!(l.areas, vec![1, 1]);
    }

    #[test]
    fn anti_diagonal_eight() {
        let m = mask(&[".#", "#."]);
        assert_eq!(label_components(&m, Connectivity::Eight).areas, vec![2]);
    }

    #[test]
    fn empty_and_full() {
        let empty = VegetationMask::filled(5, 3, false);
        assert_eq!(label_components(&empty, Connectivity::Eight).component_count(), 0);
        let full = VegetationMask::filled(5, 3, true);
        assert_eq!(label_components(&full, Connectivity::Four).areas, vec![15]);
    }

    #[test]
    fn connectivity_serde() {
        assert_eq!(Connectivity::try_from(8).unwrap(), Connectivity::Eight);
        assert!(Connectivity::try_from(6).is_err());
    }
}
