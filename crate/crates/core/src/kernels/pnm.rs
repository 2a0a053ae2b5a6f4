//! Plain (ASCII) PGM/PPM, used for human-readable test fixtures.

use super::{Image, KernelError};

pub fn write_plain(img: &Image) -> String {
    let magic = if img.channels() == 1 { "P2" } else { "P3" };
    let mut s = format!("{magic}\n{} {}\n255\n", img.width(), img.height());
    let row_len = img.width() * img.channels();
    for row in img.data().chunks(row_len) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_plain(text: &str) -> Result<Image, KernelError> {
    let bad = |m: &str| KernelError::InvalidImage(format!("pnm: {m}"));
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    let channels = match tokens.next() {
        Some("P2") => 1,
        Some("P3") => 3,
        _ => return Err(bad("expected P2 or P3")),
    };
    let mut num = || -> Result<usize, KernelError> {
        tokens
            .next()
            .ok_or_else(|| bad("truncated"))?
            .parse()
            .map_err(|_| bad("not a number"))
    };
    let (w, h, max) = (num()?, num()?, num()?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = (0..w * h * channels)
        .map(|_| num().and_then(|v| u8::try_from(v).map_err(|_| bad("sample > 255"))))
        .collect::<Result<Vec<u8>, _>>()?;
    Image::new(w, h, channels, data)
}
