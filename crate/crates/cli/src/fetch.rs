//! Download and checksum verification of the MNIST IDX files.

use std::io::Read;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use elephant_experiments::classify::MNIST_FILES;
use sha2::{Digest, Sha256};

/// SHA-256 of the uncompressed files, in the order of [`MNIST_FILES`].
pub const MNIST_SHA256: [&str; 4] = [
    "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
];

const GZ_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";
const NPM_TARBALL: &str = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz";
const MAX_DOWNLOAD: u64 = 256 << 20;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_ok(dir: &Path, i: usize) -> bool {
    std::fs::read(dir.join(MNIST_FILES[i])).is_ok_and(|b| sha256_hex(&b) == MNIST_SHA256[i])
}

fn get(url: &str) -> Result<Vec<u8>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(300)))
        .build()
        .into();
    let mut resp = agent.get(url).call().with_context(|| format!("GET {url}"))?;
    resp.body_mut()
        .with_config()
        .limit(MAX_DOWNLOAD)
        .read_to_vec()
        .with_context(|| format!("reading {url}"))
}

fn store(dir: &Path, i: usize, bytes: &[u8]) -> Result<()> {
    let got = sha256_hex(bytes);
    if got != MNIST_SHA256[i] {
        bail!("{}: checksum {got} does not match {}", MNIST_FILES[i], MNIST_SHA256[i]);
    }
    let p = dir.join(MNIST_FILES[i]);
    std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

fn from_gz_mirror(dir: &Path, missing: &[usize]) -> Result<()> {
    for &i in missing {
        let gz = get(&format!("{GZ_MIRROR}/{}.gz", MNIST_FILES[i]))?;
        let mut raw = Vec::new();
        flate2::read::GzDecoder::new(&gz[..])
            .read_to_end(&mut raw)
            .with_context(|| format!("decompressing {}", MNIST_FILES[i]))?;
        store(dir, i, &raw)?;
    }
    Ok(())
}

fn from_npm(dir: &Path, missing: &[usize]) -> Result<()> {
    let tgz = get(NPM_TARBALL)?;
    let mut archive = tar::Archive::new(flate2::read::GzDecoder::new(&tgz[..]));
    let mut found = Vec::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.file_name().and_then(|n| n.to_str()).map(str::to_owned);
        let Some(i) = name.and_then(|n| MNIST_FILES.iter().position(|f| *f == n)) else {
            continue;
        };
        if !missing.contains(&i) {
            continue;
        }
        let mut raw = Vec::new();
        entry.read_to_end(&mut raw)?;
        store(dir, i, &raw)?;
        found.push(i);
    }
    if let Some(i) = missing.iter().find(|i| !found.contains(i)) {
        bail!("{} not found in {NPM_TARBALL}", MNIST_FILES[*i]);
    }
    Ok(())
}

/// Makes sure `dir` holds the four files with the expected checksums,
/// downloading whatever is missing or corrupt. Returns how many files were fetched.
pub fn fetch_mnist(dir: &Path, verify_only: bool) -> Result<usize> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let missing: Vec<usize> = (0..MNIST_FILES.len()).filter(|i| !file_ok(dir, *i)).collect();
    if missing.is_empty() {
        return Ok(0);
    }
    if verify_only {
        let names: Vec<&str> = missing.iter().map(|i| MNIST_FILES[*i]).collect();
        bail!("missing or corrupt: {}", names.join(", "));
    }
    let mut errors = Vec::new();
    for (name, source) in [
        ("gz mirror", from_gz_mirror as fn(&Path, &[usize]) -> Result<()>),
        ("npm tarball", from_npm),
    ] {
        let still: Vec<usize> = missing.iter().copied().filter(|i| !file_ok(dir, *i)).collect();
        if still.is_empty() {
            break;
        }
        match source(dir, &still) {
            Ok(()) => log::info!("fetched {} file(s) from the {name}", still.len()),
            Err(e) => {
                log::warn!("{name} failed: {e:#}");
                errors.push(format!("{name}: {e:#}"));
            }
        }
    }
    if (0..MNIST_FILES.len()).all(|i| file_ok(dir, i)) {
        Ok(missing.len())
    } else {
        Err(anyhow!("could not fetch MNIST: {}", errors.join("; ")))
    }
}
