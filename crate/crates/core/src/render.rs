//! Rasterization of signed supports into portable anymap images.
//!
//! A mask pixel records which mass signs touch it with positive area.  The
//! grid is math-ordered (row 0 at the bottom); the writers flip rows so that
//! image row 0 is the top of the unit square, and both writers are
//! deterministic byte for byte.

use std::fs;
use std::path::Path;

use num_traits::Signed;
use thiserror::Error;

use crate::ifs_support::{
    pixel_range, visit_support_rects, OccupancyGrid, SupportApprox, SupportError, DEFAULT_BUDGET,
};
use crate::qt_matrix::QtMatrix2;

pub const MIN_RESOLUTION: usize = 16;

pub const GRAY_EMPTY: u8 = 255;
pub const GRAY_POSITIVE: u8 = 170;
pub const GRAY_NEGATIVE: u8 = 60;
pub const GRAY_MIXED: u8 = 110;
pub const RGB_MIXED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("resolution {0} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooSmall(usize),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad image: {0}")]
    BadImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelState {
    Empty,
    Positive,
    Negative,
    Mixed,
}

impl PixelState {
    fn absorb(self, positive: bool) -> PixelState {
        match (self, positive) {
            (PixelState::Empty, true) => PixelState::Positive,
            (PixelState::Empty, false) => PixelState::Negative,
            (PixelState::Positive, false) | (PixelState::Negative, true) => PixelState::Mixed,
            (state, _) => state,
        }
    }

    fn gray(self) -> u8 {
        match self {
            PixelState::Empty => GRAY_EMPTY,
            PixelState::Positive => GRAY_POSITIVE,
            PixelState::Negative => GRAY_NEGATIVE,
            PixelState::Mixed => GRAY_MIXED,
        }
    }

    fn rgb(self) -> [u8; 3] {
        match self {
            PixelState::Mixed => RGB_MIXED,
            state => [state.gray(); 3],
        }
    }
}

/// Signed occupancy of a res x res pixel grid, row 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMask {
    res: usize,
    cells: Vec<PixelState>,
}

impl SignedMask {
    pub fn new(res: usize) -> Self {
        assert!(res >= 1);
        SignedMask {
            res,
            cells: vec![PixelState::Empty; res * res],
        }
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn get(&self, ix: usize, iy: usize) -> PixelState {
        assert!(ix < self.res && iy < self.res);
        self.cells[iy * self.res + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, state: PixelState) {
        assert!(ix < self.res && iy < self.res);
        self.cells[iy * self.res + ix] = state;
    }

    fn mark(&mut self, ix: usize, iy: usize, positive: bool) {
        let cell = &mut self.cells[iy * self.res + ix];
        *cell = cell.absorb(positive);
    }

    /// Pixel counts as (empty, positive, negative, mixed).
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        let mut c = (0, 0, 0, 0);
        for state in &self.cells {
            match state {
                PixelState::Empty => c.0 += 1,
                PixelState::Positive => c.1 += 1,
                PixelState::Negative => c.2 += 1,
                PixelState::Mixed => c.3 += 1,
            }
        }
        c
    }

    /// Forgets signs; a pixel is occupied when anything touched it.
    pub fn occupancy(&self) -> OccupancyGrid {
        let mut grid = OccupancyGrid::new(self.res);
        for iy in 0..self.res {
            for ix in 0..self.res {
                if self.get(ix, iy) != PixelState::Empty {
                    grid.set(ix, iy);
                }
            }
        }
        grid
    }
}

pub fn rasterize_support(
    matrix: &QtMatrix2,
    depth: u32,
    res: usize,
) -> Result<SignedMask, RenderError> {
    rasterize_support_with_budget(matrix, depth, res, DEFAULT_BUDGET)
}

/// Rasterizes an already-enumerated support; an empty rectangle list gives
/// an all-empty mask.
pub fn rasterize_approx(approx: &SupportApprox, res: usize) -> Result<SignedMask, RenderError> {
    if res < MIN_RESOLUTION {
        return Err(RenderError::ResolutionTooSmall(res));
    }
    let mut mask = SignedMask::new(res);
    for rect in approx.rects() {
        let (x0, x1) = pixel_range(&rect.u1, &rect.u2, res);
        let (y0, y1) = pixel_range(&rect.v1, &rect.v2, res);
        let positive = rect.mass.is_positive();
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                mask.mark(ix, iy, positive);
            }
        }
    }
    Ok(mask)
}

pub fn rasterize_support_with_budget(
    matrix: &QtMatrix2,
    depth: u32,
    res: usize,
    budget: u64,
) -> Result<SignedMask, RenderError> {
    if res < MIN_RESOLUTION {
        return Err(RenderError::ResolutionTooSmall(res));
    }
    let mut mask = SignedMask::new(res);
    visit_support_rects(matrix, depth, budget, |rect| {
        let (x0, x1) = pixel_range(&rect.u1, &rect.u2, res);
        let (y0, y1) = pixel_range(&rect.v1, &rect.v2, res);
        let positive = rect.mass.is_positive();
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                mask.mark(ix, iy, positive);
            }
        }
    })?;
    Ok(mask)
}

fn pnm_header(magic: &str, res: usize) -> Vec<u8> {
    format!("{magic}\n{res} {res}\n255\n").into_bytes()
}

/// 8-bit grayscale, one byte per pixel, image row 0 on top.
pub fn encode_pgm(mask: &SignedMask) -> Vec<u8> {
    let res = mask.res();
    let mut bytes = pnm_header("P5", res);
    for row in 0..res {
        let iy = res - 1 - row;
        for ix in 0..res {
            bytes.push(mask.get(ix, iy).gray());
        }
    }
    bytes
}

/// 8-bit RGB with mixed-sign pixels in red.
pub fn encode_ppm(mask: &SignedMask) -> Vec<u8> {
    let res = mask.res();
    let mut bytes = pnm_header("P6", res);
    for row in 0..res {
        let iy = res - 1 - row;
        for ix in 0..res {
            bytes.extend_from_slice(&mask.get(ix, iy).rgb());
        }
    }
    bytes
}

pub fn save_pgm(mask: &SignedMask, path: &Path) -> Result<(), RenderError> {
    fs::write(path, encode_pgm(mask))?;
    Ok(())
}

pub fn save_ppm(mask: &SignedMask, path: &Path) -> Result<(), RenderError> {
    fs::write(path, encode_ppm(mask))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmFormat {
    Pgm,
    Ppm,
}

#[derive(Debug, Clone)]
pub struct PnmImage {
    pub format: PnmFormat,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Payload in file order, 1 byte per sample (P5) or 3 (P6).
    pub data: Vec<u8>,
}

impl PnmImage {
    /// Occupancy for box counting: every non-white pixel counts, and image
    /// rows are flipped back into math order.
    pub fn occupancy_from_nonwhite(&self) -> Result<OccupancyGrid, RenderError> {
        if self.width != self.height {
            return Err(RenderError::BadImage(format!(
                "mask must be square, got {}x{}",
                self.width, self.height
            )));
        }
        let res = self.width;
        let white = (self.maxval.min(255)) as u8;
        let stride = match self.format {
            PnmFormat::Pgm => 1,
            PnmFormat::Ppm => 3,
        };
        let mut grid = OccupancyGrid::new(res);
        for row in 0..res {
            let iy = res - 1 - row;
            for ix in 0..res {
                let offset = (row * res + ix) * stride;
                let sample = &self.data[offset..offset + stride];
                if sample.iter().any(|&b| b != white) {
                    grid.set(ix, iy);
                }
            }
        }
        Ok(grid)
    }
}

pub fn read_pnm(bytes: &[u8]) -> Result<PnmImage, RenderError> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String, RenderError> {
        // Whitespace and '#' comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(RenderError::BadImage(format!("missing {what}")));
                }
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token("magic number")?;
    let format = match magic.as_str() {
        "P5" => PnmFormat::Pgm,
        "P6" => PnmFormat::Ppm,
        other => {
            return Err(RenderError::BadImage(format!(
                "unsupported magic number '{other}'"
            )))
        }
    };
    let parse = |what: &str, text: String| -> Result<usize, RenderError> {
        text.parse::<usize>()
            .map_err(|_| RenderError::BadImage(format!("bad {what} '{text}'")))
    };
    let width = parse("width", token("width")?)?;
    let height = parse("height", token("height")?)?;
    let maxval = parse("maxval", token("maxval")?)?;
    if width == 0 || height == 0 {
        return Err(RenderError::BadImage("zero image dimension".into()));
    }
    if !(1..=255).contains(&maxval) {
        return Err(RenderError::BadImage(format!(
            "maxval {maxval} outside 1..=255"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(RenderError::BadImage("missing payload separator".into())),
    }
    let stride = match format {
        PnmFormat::Pgm => 1,
        PnmFormat::Ppm => 3,
    };
    let need = width * height * stride;
    let data = bytes[pos..].to_vec();
    if data.len() != need {
        return Err(RenderError::BadImage(format!(
            "payload has {} bytes, geometry wants {need}",
            data.len()
        )));
    }
    Ok(PnmImage {
        format,
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pnm_file(path: &Path) -> Result<PnmImage, RenderError> {
    read_pnm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn tiny_mask() -> SignedMask {
        let mut mask = SignedMask::new(2);
        mask.set(0, 0, PixelState::Positive);
        mask.set(1, 0, PixelState::Empty);
        mask.set(0, 1, PixelState::Negative);
        mask.set(1, 1, PixelState::Mixed);
        mask
    }

    #[test]
    fn golden_bytes_for_a_two_by_two_mask() {
        let mask = tiny_mask();
        let pgm = encode_pgm(&mask);
        let mut want = b"P5\n2 2\n255\n".to_vec();
        want.extend_from_slice(&[60, 110, 170, 255]);
        assert_eq!(pgm, want);
        assert_eq!(pgm.len(), 15);

        let ppm = encode_ppm(&mask);
        let mut want = b"P6\n2 2\n255\n".to_vec();
        want.extend_from_slice(&[60, 60, 60, 255, 0, 0, 170, 170, 170, 255, 255, 255]);
        assert_eq!(ppm, want);
    }

    #[test]
    fn pnm_round_trips_and_rejects_malformed_input() {
        let mask = tiny_mask();
        for bytes in [encode_pgm(&mask), encode_ppm(&mask)] {
            let image = read_pnm(&bytes).unwrap();
            assert_eq!(image.width, 2);
            assert_eq!(image.height, 2);
            assert_eq!(image.maxval, 255);
            let grid = image.occupancy_from_nonwhite().unwrap();
            assert!(grid.get(0, 0));
            assert!(!grid.get(1, 0));
            assert!(grid.get(0, 1));
            assert!(grid.get(1, 1));
            assert_eq!(grid.occupied(), 3);
        }

        assert!(matches!(
            read_pnm(b"P4\n2 2\n255\n0000"),
            Err(RenderError::BadImage(_))
        ));
        assert!(matches!(
            read_pnm(b"P5\n2 2\n255\n00"),
            Err(RenderError::BadImage(_))
        ));
        assert!(matches!(
            read_pnm(b"P5\n2 2\n70000\n0000"),
            Err(RenderError::BadImage(_))
        ));
        assert!(matches!(read_pnm(b"P5\n2"), Err(RenderError::BadImage(_))));

        // Comments in the header are legal.
        let mut bytes = b"P5\n# generated\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        assert_eq!(read_pnm(&bytes).unwrap().data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn rasterizes_the_plus_shaped_first_level() {
        let mask = rasterize_support(&QtMatrix2::t0(), 1, 81).unwrap();
        // Corner blocks stay empty, arms are positive, the center is negative.
        for (region, want) in [
            (((0, 0), (26, 26)), PixelState::Empty),
            (((54, 0), (80, 26)), PixelState::Empty),
            (((0, 54), (26, 80)), PixelState::Empty),
            (((54, 54), (80, 80)), PixelState::Empty),
            (((27, 0), (53, 26)), PixelState::Positive),
            (((0, 27), (26, 53)), PixelState::Positive),
            (((54, 27), (80, 53)), PixelState::Positive),
            (((27, 54), (53, 80)), PixelState::Positive),
            (((27, 27), (53, 53)), PixelState::Negative),
        ] {
            let ((x0, y0), (x1, y1)) = region;
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    assert_eq!(mask.get(ix, iy), want, "pixel ({ix}, {iy})");
                }
            }
        }
        assert!(matches!(
            rasterize_support(&QtMatrix2::t0(), 1, 8),
            Err(RenderError::ResolutionTooSmall(8))
        ));

        let approx = crate::ifs_support::enumerate_support(&QtMatrix2::t0(), 1).unwrap();
        assert_eq!(rasterize_approx(&approx, 81).unwrap(), mask);
        assert_eq!(SignedMask::new(16).counts(), (256, 0, 0, 0));
    }

    #[test]
    fn deep_triadic_mask_has_the_closed_form_census() {
        let mask = rasterize_support(&QtMatrix2::t0(), 6, 729).unwrap();
        let (empty, positive, negative, mixed) = mask.counts();
        // Each depth-6 rectangle covers exactly one pixel; signs follow the
        // parity of center visits, whose difference telescopes to 3^6.
        assert_eq!(positive + negative, 15625);
        assert_eq!(positive - negative, 729);
        assert_eq!(negative, 7448);
        assert_eq!(mixed, 0);
        assert_eq!(empty, 729 * 729 - 15625);
        assert_eq!(mask.occupancy().occupied(), 15625);

        let again = rasterize_support(&QtMatrix2::t0(), 6, 729).unwrap();
        assert_eq!(encode_pgm(&mask), encode_pgm(&again));
    }

    #[test]
    fn misaligned_resolution_marks_partial_overlap() {
        // With res 16 the thirds do not land on pixel edges, so boundary
        // pixels are claimed by both neighbors when both carry mass.
        let mask = rasterize_support(&QtMatrix2::tr(&rat(1, 2)).unwrap(), 1, 16).unwrap();
        // Cell boundary at 1/2 aligns with pixel 8; 2/3 falls inside pixel 10.
        assert_eq!(mask.get(0, 0), PixelState::Positive);
        assert_eq!(mask.get(7, 7), PixelState::Positive);
        assert_eq!(mask.get(8, 0), PixelState::Empty);
        // Column of the center block boundary: pixels straddling 2/3 see the
        // positive small squares on both sides and the negative center.
        let (_, _, negative, mixed) = mask.counts();
        assert!(negative > 0);
        assert!(mixed > 0);
    }
}
