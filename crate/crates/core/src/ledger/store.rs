use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::Block;
use crate::codec::CodecError;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("chain file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("chain file record {index} is corrupt: {source}")]
    Corrupt { index: usize, source: CodecError },
    #[error("chain file ends inside record {0}")]
    Truncated(usize),
}

/// Append-only file of length-prefixed (u32 big-endian) encoded blocks.
pub struct ChainStore {
    path: PathBuf,
    file: File,
}

impl ChainStore {
    pub fn open(path: impl AsRef<Path>) -> Result<ChainStore, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ChainStore { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, block: &Block) -> Result<(), StoreError> {
        let bytes = block.encode();
        let len = u32::try_from(bytes.len()).map_err(|_| io::Error::new(ErrorKind::InvalidInput, "block too large"))?;
        let mut record = Vec::with_capacity(4 + bytes.len());
        record.extend_from_slice(&len.to_be_bytes());
        record.extend_from_slice(&bytes);
        self.file.write_all(&record)?;
        self.file.sync_data()?;
        Ok(())
    }

    /// Replaces the file contents with `blocks`.
    pub fn rewrite<'a>(&mut self, blocks: impl IntoIterator<Item = &'a Block>) -> Result<(), StoreError> {
        let tmp = self.path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            write_blocks(&mut w, blocks)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }

    /// Reads every block in file order.
    pub fn load(&self) -> Result<Vec<Block>, StoreError> {
        read_blocks(BufReader::new(File::open(&self.path)?))
    }
}

pub fn read_blocks(mut reader: impl Read) -> Result<Vec<Block>, StoreError> {
    let mut blocks = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match reader.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(blocks),
            Err(e) => return Err(e.into()),
        }
        let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
        reader.read_exact(&mut buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => StoreError::Truncated(blocks.len()),
            _ => e.into(),
        })?;
        let block = Block::decode(&buf).map_err(|source| StoreError::Corrupt { index: blocks.len(), source })?;
        blocks.push(block);
    }
}

pub fn write_blocks<'a>(writer: impl Write, blocks: impl IntoIterator<Item = &'a Block>) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    for block in blocks {
        let bytes = block.encode();
        w.write_all(&(bytes.len() as u32).to_be_bytes())?;
        w.write_all(&bytes)?;
    }
    w.flush()
}
