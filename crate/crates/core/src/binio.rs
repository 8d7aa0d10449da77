//! Little-endian helpers shared by the ETS1 and NDS1 codecs.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

pub(crate) fn read_magic<R: Read>(r: &mut R) -> io::Result<[u8; 4]> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    Ok(magic)
}

pub(crate) fn read_string_u16<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn write_string_u16<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "string longer than 65535 bytes"))?;
    w.write_u16::<LittleEndian>(len)?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_f32_into<R: Read>(r: &mut R, out: &mut [f32]) -> io::Result<()> {
    r.read_f32_into::<LittleEndian>(out)
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

/// True when the reader has no bytes left.
pub(crate) fn at_eof<R: Read>(r: &mut R) -> io::Result<bool> {
    let mut probe = [0u8; 1];
    loop {
        match r.read(&mut probe) {
            Ok(0) => return Ok(true),
            Ok(_) => return Ok(false),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Writes to a sibling temporary file and renames it into place, so a failed
/// write never leaves a partial file at `path`.
pub(crate) fn write_atomically<F>(path: &Path, body: F) -> io::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let mut tmp_name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}
