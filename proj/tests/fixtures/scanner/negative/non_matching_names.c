#include <linux/atomic.h>

void recycle(struct obj *o)
{
	if (atomic_dec_and_test(&o->refs))
		obj_recycle(o);
}
