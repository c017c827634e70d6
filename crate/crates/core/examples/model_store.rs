//! Content-addressed model storage: blobs are stored under their digest and
//! every read is checked against it.

use fedstr::ml::{init_model, ModelSpec};
use fedstr::store::{get_params, put_params, FileStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = FileStore::new(dir.path())?;

    let params = init_model(&ModelSpec::mlp(4, vec![8], 1, fedstr::ml::Activation::Tanh, 3))?;
    let r = put_params(&params, &store)?;
    println!("stored {} params as {}", params.len(), r.to_tag_value());
    assert_eq!(get_params(&r, &store)?, params);

    let again = put_params(&params, &store)?;
    println!("same blob, same address: {}", again == r);

    let path = store.path_for(&r.sha256);
    let mut bytes = std::fs::read(&path)?;
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    std::fs::write(&path, bytes)?;
    match get_params(&r, &store) {
        Ok(_) => println!("tampering went unnoticed"),
        Err(e) => println!("after flipping one bit: {e}"),
    }
    Ok(())
}
