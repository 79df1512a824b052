//! GF(2^4) arithmetic and a small matrix solve.
use bpnc::gf::{Field, Matrix};

fn main() {
    let f = Field::new(4).unwrap();
    println!("{f:?}");
    let (a, b) = (0x3, 0x5);
    println!("{a:#x} + {b:#x} = {:#x}", f.add(a, b));
    println!("{a:#x} * {b:#x} = {:#x}", f.mul(a, b));
    println!("inv({a:#x}) = {:#x}", f.inv(a).unwrap());
    println!("generator powers: {:?}", (0..15).map(|i| f.exp(i)).collect::<Vec<_>>());

    let m = Matrix::from_rows(&[[1u8, 2, 3], [4, 5, 6], [7, 8, 9]]).unwrap();
    println!("rank of 3x3 = {}", m.rank(&f));
    match m.invert(&f) {
        Ok(inv) => {
            let id = m.mul(&f, &inv).unwrap();
            println!("M * M^-1 is identity: {}", id == Matrix::identity(3));
        }
        Err(e) => println!("not invertible: {e}"),
    }
    let packed = f.pack(&[0xA, 0xB, 0xC]);
    println!("packed nibbles {packed:02x?} -> {:?}", f.unpack(&packed));
}
