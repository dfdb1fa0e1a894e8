//! Little-endian primitives shared by the on-disk formats.
//!
//! Every file this crate writes starts with a four-byte magic tag followed
//! by a `u32` version. All integers and floats are little-endian.

use std::io::{self, Read, Write};

pub fn read_magic(r: &mut impl Read) -> io::Result<[u8; 4]> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_magic(w: &mut impl Write, magic: &[u8; 4]) -> io::Result<()> {
    w.write_all(magic)
}

pub fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_u32(w: &mut impl Write, value: u32) -> io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub fn read_i32(r: &mut impl Read) -> io::Result<i32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(i32::from_le_bytes(buf))
}

pub fn write_i32(w: &mut impl Write, value: i32) -> io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

pub fn write_f32(w: &mut impl Write, value: f32) -> io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

pub fn read_f32_vec(r: &mut impl Read, len: usize) -> io::Result<Vec<f32>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f32(r)?);
    }
    Ok(out)
}

pub fn write_f32_slice(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    for &v in values {
        write_f32(w, v)?;
    }
    Ok(())
}
