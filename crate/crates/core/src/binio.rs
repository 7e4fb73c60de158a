//! Little-endian primitives for the versioned binary model and cache files.

use std::io::{self, Read, Write};

pub fn write_magic(w: &mut impl Write, magic: &[u8]) -> io::Result<()> {
    w.write_all(magic)
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8]) -> io::Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)?;
    if buf != magic {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad magic header, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    Ok(())
}

pub fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_str(r: &mut impl Read) -> io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut buf = Vec::new();
        write_magic(&mut buf, b"TEST1").unwrap();
        write_u32(&mut buf, 7).unwrap();
        write_u64(&mut buf, u64::MAX - 3).unwrap();
        write_f64(&mut buf, -0.125).unwrap();
        write_str(&mut buf, "héllo").unwrap();
        let mut r = &buf[..];
        expect_magic(&mut r, b"TEST1").unwrap();
        assert_eq!(read_u32(&mut r).unwrap(), 7);
        assert_eq!(read_u64(&mut r).unwrap(), u64::MAX - 3);
        assert_eq!(read_f64(&mut r).unwrap(), -0.125);
        assert_eq!(read_str(&mut r).unwrap(), "héllo");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut r = &b"NOPE1"[..];
        assert!(expect_magic(&mut r, b"TEST1").is_err());
    }
}
