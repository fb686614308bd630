//! Binary PPM (P6) output with a plain-text legend sidecar.

use std::path::Path;

use floorspace_core::ntl::{RenderedMap, NODATA_COLOR};

use crate::error::Result;

pub fn encode_ppm(m: &RenderedMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend_from_slice(&m.rgb);
    out
}

/// Value-to-color mapping of a rendered map.
pub fn legend(m: &RenderedMap) -> String {
    let s = m.palette.stops();
    let mid = 0.5 * (m.lo + m.hi);
    format!(
        "palette={}\nlo={}\nhi={}\nclip_percentiles=2,98\nmapping=linear\n\
         stop_lo={} {} {}\nstop_mid={} {} {} at {}\nstop_hi={} {} {}\nnodata={} {} {}\n",
        m.palette.as_str(),
        m.lo,
        m.hi,
        s[0][0], s[0][1], s[0][2],
        s[1][0], s[1][1], s[1][2], mid,
        s[2][0], s[2][1], s[2][2],
        NODATA_COLOR[0], NODATA_COLOR[1], NODATA_COLOR[2],
    )
}

/// Writes `path` and `path` with a `.txt` extension holding the legend.
pub fn write_map(m: &RenderedMap, path: &Path) -> Result<()> {
    crate::write_bytes(path, &encode_ppm(m))?;
    crate::write_bytes(&path.with_extension("txt"), legend(m).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use floorspace_core::ntl::{render, Palette};
    use floorspace_core::{GeoTransform, Raster};

    #[test]
    fn header_and_payload_sizes() {
        let t = GeoTransform::north_up(0.0, 0.0, 1.0).unwrap();
        let r = Raster::from_f32(3, 2, 1, t, vec![-1.0, 0.0, 1.0, 2.0, -9999.0, 0.5]).unwrap();
        let m = render(&r, Palette::Diverging).unwrap();
        let bytes = encode_ppm(&m);
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 18);
        assert_eq!(&bytes[header.len() + 12..header.len() + 15], &NODATA_COLOR);
        assert!(legend(&m).starts_with("palette=diverging\n"));
    }
}
